"""Band reduction: schedules, panel QR, and the two-sided update."""

import numpy as np
import pytest

from pipeevd.core import FlopCounter, SymmetricMatrix
from pipeevd.sbr import (SbrConfig, SbrFactors, form_z, panel_qr,
                         round_schedule, sbr_reduce, trailing_update)


def _rand_sym(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return SymmetricMatrix.from_dense((a + a.T) / 2)


def _embed_panels(factors):
    """Dense Q_s as the ordered product of the panel reflectors."""
    n = factors.n
    q = np.eye(n)
    for pan in reversed(factors.panels):
        t0 = n - pan.W.shape[0]
        q[t0:, :] -= pan.W @ (pan.Y.T @ q[t0:, :])
    return q


def test_round_schedule_divisible():
    rounds = round_schedule(12, 4)
    assert rounds == [(0, 4, 4), (4, 4, 8)]
    rounds = round_schedule(8, 2)
    assert rounds == [(0, 2, 2), (2, 2, 4), (4, 2, 6)]


def test_round_schedule_ragged_last_panel():
    rounds = round_schedule(11, 4)
    assert rounds == [(0, 4, 4), (4, 3, 8)]
    assert sum(pw for _, pw, _ in rounds) == 11 - 4


def test_round_schedule_covers_all_columns():
    for seed in range(12):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(1, 9))
        n = int(rng.integers(b + 1, 64))
        rounds = round_schedule(n, b)
        cols = [c for c0, pw, _ in rounds for c in range(c0, c0 + pw)]
        assert cols == list(range(n - b))
        for c0, pw, t0 in rounds:
            assert t0 == c0 + b
            assert 1 <= pw <= b


def test_sbr_config_validation():
    with pytest.raises(ValueError, match="panel_width"):
        SbrConfig(b=4, panel_width=2)
    with pytest.raises(ValueError, match="bandwidth"):
        SbrConfig(b=0)
    assert SbrConfig(b=4).panel_width == 4


def test_panel_qr_factors():
    for seed in range(10):
        rng = np.random.default_rng(900 + seed)
        m = int(rng.integers(4, 40))
        k = int(rng.integers(1, min(m, 9)))
        p0 = rng.standard_normal((m, k))
        panel = np.array(p0, order="F")
        pan = panel_qr(panel, inner_block=3)
        # panel now holds R
        np.testing.assert_array_equal(np.tril(panel, -1), 0.0)
        q = np.eye(m) - pan.W @ pan.Y.T
        np.testing.assert_allclose(q.T @ q, np.eye(m), atol=1e-13)
        np.testing.assert_allclose(q.T @ p0, panel, atol=1e-13 * np.linalg.norm(p0))
        # R agrees with the reference QR up to column signs
        r_ref = np.linalg.qr(p0, mode="r")
        np.testing.assert_allclose(np.abs(np.diag(panel)[:k]),
                                   np.abs(np.diag(r_ref)), rtol=1e-12)


def test_panel_qr_inner_block_invariant():
    rng = np.random.default_rng(31)
    p0 = rng.standard_normal((30, 8))
    r1 = np.array(p0, order="F")
    r2 = np.array(p0, order="F")
    panel_qr(r1, inner_block=1)
    panel_qr(r2, inner_block=8)
    np.testing.assert_allclose(r1, r2, atol=1e-13 * np.linalg.norm(p0))


def test_panel_qr_requires_tall_panel():
    with pytest.raises(ValueError, match="tall"):
        panel_qr(np.zeros((2, 3), order="F"))


def test_form_z_matches_formula():
    rng = np.random.default_rng(12)
    m, k = 20, 4
    a = rng.standard_normal((m, m))
    a = a + a.T
    w = rng.standard_normal((m, k))
    y = rng.standard_normal((m, k))
    z = form_z(a, w, y)
    want = a @ w - 0.5 * (y @ (w.T @ (a @ w)))
    np.testing.assert_allclose(z, want, atol=1e-12)
    with pytest.raises(ValueError, match="form_z"):
        form_z(a, w, y[:-1])


def test_trailing_update_modes_agree():
    rng = np.random.default_rng(13)
    m, k = 70, 4
    a0 = rng.standard_normal((m, m))
    a0 = a0 + a0.T
    y = rng.standard_normal((m, k))
    z = rng.standard_normal((m, k))
    a_full = np.array(a0, order="F")
    a_sym = np.array(a0, order="F")
    cf, cs = FlopCounter(), FlopCounter()
    trailing_update(a_full, y, z, "full", cf)
    trailing_update(a_sym, y, z, "symmetric", cs)
    np.testing.assert_allclose(a_sym, a_full, atol=1e-13 * np.linalg.norm(a0))
    assert cf.by_stage["SBR"] == 2 * m * m * k
    # the triangle path skips most of the mirrored half
    assert cs.by_stage["SBR"] < cf.by_stage["SBR"]
    with pytest.raises(ValueError, match="mode"):
        trailing_update(a_full, y, z, "both")


def test_sbr_reduce_band_similarity():
    for seed in range(8):
        rng = np.random.default_rng(40 + seed)
        b = int(rng.integers(1, 7))
        n = int(rng.integers(b + 2, 50))
        a = _rand_sym(rng, n)
        band, factors = sbr_reduce(a, SbrConfig(b=b))
        assert band.b == b and band.n == n
        qs = _embed_panels(factors)
        np.testing.assert_allclose(qs.T @ qs, np.eye(n), atol=1e-13)
        np.testing.assert_allclose(qs.T @ a.data @ qs, band.to_dense(),
                                   atol=1e-12 * a.norm_f)


def test_sbr_reduce_preserves_spectrum():
    for seed in range(6):
        rng = np.random.default_rng(60 + seed)
        n = int(rng.integers(10, 48))
        b = int(rng.integers(1, 6))
        a = _rand_sym(rng, n)
        band, _ = sbr_reduce(a, SbrConfig(b=b))
        np.testing.assert_allclose(np.linalg.eigvalsh(band.to_dense()),
                                   np.linalg.eigvalsh(a.data),
                                   atol=1e-12 * np.linalg.norm(a.data, 2))


def test_sbr_reduce_counts_only_its_stage():
    rng = np.random.default_rng(2)
    a = _rand_sym(rng, 24)
    counter = FlopCounter()
    sbr_reduce(a, SbrConfig(b=4), counter)
    assert set(counter.by_stage) == {"SBR"}
    assert counter.by_stage["SBR"] > 0


def test_sbr_reduce_needs_room():
    rng = np.random.default_rng(3)
    a = _rand_sym(rng, 4)
    with pytest.raises(ValueError, match="n > b"):
        sbr_reduce(a, SbrConfig(b=4))


def test_sbr_factors_validation():
    rng = np.random.default_rng(8)
    a = _rand_sym(rng, 20)
    _, factors = sbr_reduce(a, SbrConfig(b=4))
    with pytest.raises(ValueError, match="ascending"):
        SbrFactors(n=20, b=4, panels=list(reversed(factors.panels)))
    with pytest.raises(ValueError, match="sum"):
        SbrFactors(n=20, b=4, panels=factors.panels[:-1])
