"""The accuracy metrics and the Jacobi oracle, checked against numpy's
symmetric eigensolver and small analytic cases."""

import numpy as np
import pytest

from pipeevd.core import EPS
from pipeevd.matgen import SpectrumSpec, generate, random_orthogonal
from pipeevd.verify import (AccuracyReport, backward_error, check_gemm_bounds,
                            jacobi_eig_oracle, jacobi_eig_pairs, orthogonality)


def test_backward_error_zero_for_exact_factors():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 20))
        lam = rng.standard_normal(n)
        q = random_orthogonal(n, seed)
        a = (q * lam) @ q.T
        assert backward_error(a, q, lam) < 1e-16


def test_backward_error_scales_with_perturbation():
    rng = np.random.default_rng(3)
    n = 12
    lam = rng.standard_normal(n)
    q = random_orthogonal(n, 3)
    a = (q * lam) @ q.T
    base = backward_error(a, q, lam)
    lam_bad = lam.copy()
    lam_bad[0] += 1e-6
    assert backward_error(a, q, lam_bad) > max(base, 1e-9)


def test_backward_error_zero_matrix():
    assert backward_error(np.zeros((3, 3)), np.eye(3), np.zeros(3)) == 0.0
    assert backward_error(np.zeros((3, 3)), np.eye(3), np.ones(3)) == np.inf


def test_orthogonality_metric():
    assert orthogonality(np.eye(6)) == 0.0
    q = random_orthogonal(10, 0)
    assert orthogonality(q) < 4 * EPS
    q[:, 0] *= 1.001
    assert orthogonality(q) > 1e-5


def test_accuracy_report_bound_flip():
    rng = np.random.default_rng(17)
    n = 16
    lam = rng.standard_normal(n)
    q = random_orthogonal(n, 17)
    a = (q * lam) @ q.T
    rep = AccuracyReport.from_decomposition(a, q, lam)
    assert rep.bound_ok
    assert rep.ortho <= 2 * EPS * rep.slack
    bad = q.copy()
    bad[:, 2] *= 1.001
    rep2 = AccuracyReport.from_decomposition(a, bad, lam)
    assert not rep2.bound_ok
    d = rep2.to_dict()
    assert d["bound_ok"] is False and d["eps"] == EPS


def test_check_gemm_bounds():
    q1 = random_orthogonal(32, 1)
    q2 = random_orthogonal(32, 2)
    assert check_gemm_bounds(q1, q2)
    assert not check_gemm_bounds(q1 * 1.001, q2)
    assert not check_gemm_bounds(q1, q2 * 1.001)


def test_jacobi_oracle_diagonal_matrix():
    lam = jacobi_eig_oracle(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_array_equal(lam, [-1.0, 2.0, 3.0])


def test_jacobi_oracle_two_by_two_analytic():
    for seed in range(10):
        rng = np.random.default_rng(80 + seed)
        a, b, c = rng.standard_normal(3)
        m = np.array([[a, c], [c, b]])
        mid = (a + b) / 2.0
        rad = np.hypot((a - b) / 2.0, c)
        want = np.array([mid - rad, mid + rad])
        np.testing.assert_allclose(jacobi_eig_oracle(m), want,
                                   atol=1e-14 * (1 + rad))


def test_jacobi_oracle_matches_numpy():
    for seed in range(12):
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(2, 40))
        a = rng.standard_normal((n, n))
        a = (a + a.T) / 2
        got = jacobi_eig_oracle(a)
        want = np.linalg.eigvalsh(a)
        np.testing.assert_allclose(got, want,
                                   atol=1e-12 * np.linalg.norm(a, 2))


def test_jacobi_oracle_hard_spectra():
    for kind in ("Cluster0", "Geometric"):
        a, lam = generate(SpectrumSpec(kind, 24, cond=1e8, lambda_max=1e6, seed=1))
        got = jacobi_eig_oracle(a)
        np.testing.assert_allclose(got, lam, atol=1e-12 * lam[-1])


def test_jacobi_pairs_residual():
    for seed in range(6):
        rng = np.random.default_rng(300 + seed)
        n = int(rng.integers(3, 30))
        a = rng.standard_normal((n, n))
        a = (a + a.T) / 2
        lam, v = jacobi_eig_pairs(a)
        assert orthogonality(v) < 1e-14
        np.testing.assert_allclose(a @ v, v * lam,
                                   atol=1e-13 * max(1.0, np.linalg.norm(a)))


def test_jacobi_oracle_size_cap():
    with pytest.raises(ValueError, match="256"):
        jacobi_eig_oracle(np.eye(257))
    with pytest.raises(ValueError, match="square"):
        jacobi_eig_oracle(np.zeros((3, 4)))
