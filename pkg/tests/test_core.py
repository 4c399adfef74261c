"""Containers and counted kernels: reflector algebra against dense formulas."""

import numpy as np
import pytest

from pipeevd.core import (BandMatrix, ColumnBlock, FlopCounter, ReflectorPanel,
                          SymmetricMatrix, TridiagonalMatrix,
                          apply_block_reflector, house_vector, matmul_counted,
                          sym_rank2k_update)


def _house_dense(v, tau):
    n = len(v)
    return np.eye(n) - tau * np.outer(v, v)


def test_house_vector_annihilates_tail():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 40))
        x = rng.standard_normal(m)
        v, tau, alpha = house_vector(x)
        assert v[0] == 1.0
        hx = _house_dense(v, tau) @ x
        np.testing.assert_allclose(hx[0], alpha, rtol=1e-14)
        np.testing.assert_allclose(hx[1:], 0.0, atol=1e-13 * np.linalg.norm(x))
        # reflection preserves length, alpha opposes x[0]
        np.testing.assert_allclose(abs(alpha), np.linalg.norm(x), rtol=1e-14)
        if x[0] != 0.0:
            assert alpha * x[0] < 0.0


def test_house_vector_zero_tail_is_identity():
    v, tau, alpha = house_vector(np.array([3.5, 0.0, 0.0]))
    assert tau == 0.0
    assert alpha == 3.5
    np.testing.assert_array_equal(v, [1.0, 0.0, 0.0])


def test_house_vector_sign_zero_leading():
    # sign(0) treated as +, so alpha comes out negative
    x = np.array([0.0, 3.0, 4.0])
    _, _, alpha = house_vector(x)
    np.testing.assert_allclose(alpha, -5.0, rtol=1e-15)


def _one_column_panel(rng, m):
    x = rng.standard_normal(m)
    v, tau, _ = house_vector(x)
    return ReflectorPanel(W=(tau * v).reshape(-1, 1), Y=v.reshape(-1, 1),
                          col_offset=0)


def test_apply_block_reflector_matches_dense():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        m = int(rng.integers(3, 24))
        pan = _one_column_panel(rng, m)
        q_dense = np.eye(m) - pan.W @ pan.Y.T
        c = rng.standard_normal((m, 5))
        got = apply_block_reflector(c.copy(order="F"), pan, side="left")
        np.testing.assert_allclose(got, q_dense @ c, rtol=0, atol=1e-13)
        got = apply_block_reflector(c.copy(order="F"), pan, side="left",
                                    transpose=True)
        np.testing.assert_allclose(got, q_dense.T @ c, rtol=0, atol=1e-13)
        r = rng.standard_normal((4, m))
        got = apply_block_reflector(r.copy(order="F"), pan, side="right")
        np.testing.assert_allclose(got, r @ q_dense, rtol=0, atol=1e-13)
        got = apply_block_reflector(r.copy(order="F"), pan, side="right",
                                    transpose=True)
        np.testing.assert_allclose(got, r @ q_dense.T, rtol=0, atol=1e-13)


def test_apply_block_reflector_counts_macs():
    rng = np.random.default_rng(7)
    pan = _one_column_panel(rng, 12)
    counter = FlopCounter()
    c = rng.standard_normal((12, 9))
    apply_block_reflector(np.asfortranarray(c), pan, counter=counter,
                          stage="SBR")
    assert counter.by_stage["SBR"] == 2 * 12 * 9 * 1


def test_apply_block_reflector_bad_side():
    rng = np.random.default_rng(1)
    pan = _one_column_panel(rng, 6)
    with pytest.raises(ValueError, match="side"):
        apply_block_reflector(np.zeros((6, 2)), pan, side="up")


def test_reflector_panel_validation():
    w = np.zeros((4, 2))
    y = np.zeros((4, 2))
    with pytest.raises(ValueError, match="unit lower"):
        ReflectorPanel(W=w, Y=y, col_offset=0)
    y[0, 0] = 1.0
    y[1, 1] = 1.0
    y[0, 1] = 0.5  # above the unit diagonal
    with pytest.raises(ValueError, match="unit lower"):
        ReflectorPanel(W=w, Y=y, col_offset=0)
    with pytest.raises(ValueError, match="shapes differ"):
        ReflectorPanel(W=np.zeros((4, 1)), Y=np.eye(4, 2), col_offset=0)
    with pytest.raises(ValueError, match="taller"):
        ReflectorPanel(W=np.zeros((2, 3)), Y=np.zeros((2, 3)), col_offset=0)


def test_sym_rank2k_update_matches_dense():
    for seed in range(8):
        rng = np.random.default_rng(300 + seed)
        m = int(rng.integers(2, 160))
        k = int(rng.integers(1, 9))
        a0 = rng.standard_normal((m, m))
        a0 = a0 + a0.T
        y = rng.standard_normal((m, k))
        z = rng.standard_normal((m, k))
        want = a0 - y @ z.T - z @ y.T
        a = np.asfortranarray(a0)
        sym_rank2k_update(a, y, z)
        np.testing.assert_allclose(a, want, rtol=0,
                                   atol=1e-13 * np.linalg.norm(a0))
        # mirrored triangle, so symmetric to the bit
        np.testing.assert_array_equal(a, a.T)


def test_sym_rank2k_update_costs_about_half():
    rng = np.random.default_rng(5)
    m, k = 200, 8
    a = np.asfortranarray(np.zeros((m, m)))
    y = rng.standard_normal((m, k))
    z = rng.standard_normal((m, k))
    counter = FlopCounter()
    sym_rank2k_update(a, y, z, counter=counter, stage="upd")
    full = 2 * m * m * k
    assert counter.by_stage["upd"] < full
    assert counter.by_stage["upd"] > full // 2


def test_sym_rank2k_update_shape_check():
    with pytest.raises(ValueError, match="shape"):
        sym_rank2k_update(np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((4, 2)))


def test_matmul_counted_exact_count():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((7, 5))
    b = rng.standard_normal((5, 3))
    counter = FlopCounter()
    out = matmul_counted(a, b, counter, stage="gemm")
    np.testing.assert_array_equal(out, a @ b)
    assert counter.by_stage["gemm"] == 7 * 3 * 5


def test_flop_counter_merge_and_total():
    c1 = FlopCounter()
    c1.add("SBR", 10)
    c1.add("BC", 4)
    c2 = FlopCounter()
    c2.add("SBR", 6)
    c1.merge(c2)
    assert c1.by_stage == {"SBR": 16, "BC": 4}
    assert c1.multiply_adds == 20
    with pytest.raises(ValueError):
        c1.add("SBR", -1)


def test_flop_counter_to_csv(tmp_path):
    c = FlopCounter()
    c.add("BC", 12)
    c.add("SBR", 3)
    path = tmp_path / "flops.csv"
    c.to_csv(path)
    assert path.read_text() == "stage,multiply_adds\nBC,12\nSBR,3\n"


def test_symmetric_matrix_rejects_asymmetry():
    a = np.eye(4)
    a[0, 1] = 1e-6
    with pytest.raises(ValueError, match="asymmetry"):
        SymmetricMatrix.from_dense(a)
    a[1, 0] = 1e-6
    sm = SymmetricMatrix.from_dense(a)
    assert sm.n == 4
    np.testing.assert_allclose(sm.norm_f, np.linalg.norm(a))


def test_symmetric_matrix_shape_check():
    with pytest.raises(ValueError, match="expected"):
        SymmetricMatrix(n=3, data=np.zeros((3, 4)))


def test_column_block_validation():
    with pytest.raises(ValueError, match="empty"):
        ColumnBlock(owner=0, col_start=2, col_end=2, data=np.zeros((4, 0)))
    with pytest.raises(ValueError, match="width"):
        ColumnBlock(owner=0, col_start=0, col_end=2, data=np.zeros((4, 3)))
    cb = ColumnBlock(owner=1, col_start=3, col_end=5, data=np.zeros((6, 2)))
    assert cb.width == 2


def _random_banded(rng, n, b):
    a = rng.standard_normal((n, n))
    a = a + a.T
    for d in range(b + 1, n):
        idx = np.arange(n - d)
        a[idx + d, idx] = 0.0
        a[idx, idx + d] = 0.0
    return a


def test_band_matrix_roundtrip():
    for seed in range(6):
        rng = np.random.default_rng(500 + seed)
        n = int(rng.integers(2, 30))
        b = int(rng.integers(0, n))
        a = _random_banded(rng, n, b)
        band = BandMatrix.from_dense(a, b)
        np.testing.assert_array_equal(band.to_dense(), a)


def test_band_matrix_rejects_off_band_entries():
    a = np.eye(5)
    a[4, 0] = 1e-8
    a[0, 4] = 1e-8
    with pytest.raises(ValueError, match="outside band"):
        BandMatrix.from_dense(a, 2)
    BandMatrix.from_dense(a, 2, tol=1e-7)  # within tolerance is fine


def test_band_matrix_bandwidth_bounds():
    with pytest.raises(ValueError, match="bad bandwidth"):
        BandMatrix(4, 4, np.zeros((5, 4)))
    with pytest.raises(ValueError, match="bad bandwidth"):
        BandMatrix(4, -1, np.zeros((0, 4)))
    BandMatrix(1, 0, np.zeros((1, 1)))  # the one-element matrix is allowed


def test_band_to_tridiagonal():
    rng = np.random.default_rng(9)
    a = _random_banded(rng, 8, 1)
    t = BandMatrix.from_dense(a, 1).to_tridiagonal()
    np.testing.assert_array_equal(t.to_dense(), a)
    d = np.arange(3.0)
    t0 = BandMatrix.from_dense(np.diag(d), 0).to_tridiagonal()
    np.testing.assert_array_equal(t0.d, d)
    np.testing.assert_array_equal(t0.e, np.zeros(2))
    with pytest.raises(ValueError, match="bandwidth"):
        BandMatrix.from_dense(_random_banded(rng, 8, 2), 2).to_tridiagonal()


def test_tridiagonal_matrix_validation():
    with pytest.raises(ValueError, match="n - 1"):
        TridiagonalMatrix(d=np.zeros(4), e=np.zeros(4))
    t = TridiagonalMatrix(d=np.array([1.0]), e=np.zeros(0))
    assert t.n == 1
    np.testing.assert_array_equal(t.to_dense(), [[1.0]])


def test_tridiagonal_norm_bound():
    for seed in range(10):
        rng = np.random.default_rng(700 + seed)
        n = int(rng.integers(1, 20))
        t = TridiagonalMatrix(d=rng.standard_normal(n),
                              e=rng.standard_normal(max(n - 1, 0)))
        true = np.max(np.abs(np.linalg.eigvalsh(t.to_dense())))
        assert t.norm2_upper() >= true - 1e-12
