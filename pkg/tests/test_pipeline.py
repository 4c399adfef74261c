"""End-to-end runs of the threaded multi-worker solver."""

import numpy as np
import pytest

import pipeevd.pipeline as pipeline
from pipeevd.core import EPS
from pipeevd.matgen import SpectrumSpec, generate
from pipeevd.messaging import TraceLog
from pipeevd.pipeline import PipelineConfig, PipelineError, run, run_auto_skew
from pipeevd.schedule import comm_broadcast_words, validate_trace
from pipeevd.verify import (AccuracyReport, backward_error, jacobi_eig_oracle,
                            jacobi_eig_pairs, orthogonality)


def _problem(n, seed, kind="Uniform"):
    a, _ = generate(SpectrumSpec(kind, n, seed=seed))
    return a


def test_config_validation():
    with pytest.raises(ValueError, match="workers"):
        PipelineConfig(workers=0)
    with pytest.raises(ValueError, match="bandwidth"):
        PipelineConfig(workers=1, b=0)
    with pytest.raises(ValueError, match="order"):
        PipelineConfig(workers=1, order="parallel")
    with pytest.raises(ValueError, match="back_skew"):
        PipelineConfig(workers=1, back_skew=0.06)


def test_small_problems_match_oracle():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 40))
        workers = int(rng.integers(1, min(4, n) + 1))
        a = _problem(n, seed)
        cfg = PipelineConfig(workers=workers, b=4)
        result, events, ledger, counter = run(a, cfg)
        lam_ref = jacobi_eig_oracle(a)
        np.testing.assert_allclose(result.lam, lam_ref,
                                   atol=1e-12 * np.abs(lam_ref).max())
        rep = AccuracyReport.from_decomposition(a.data, result.Q, result.lam)
        assert rep.bound_ok
        assert rep.backward <= 1e-15
        validate_trace(events, workers)


def test_backward_error_close_to_oracle():
    # the two-stage path loses at most one order of magnitude against
    # the dense Jacobi oracle on the same matrix
    for n, workers in ((48, 2), (96, 3), (128, 4)):
        a = _problem(n, n)
        result, _, _, _ = run(a, PipelineConfig(workers=workers, b=8))
        lam_o, v_o = jacobi_eig_pairs(a)
        pipe_back = backward_error(a.data, result.Q, result.lam)
        oracle_back = backward_error(a.data, v_o, lam_o)
        assert pipe_back <= 10.0 * oracle_back + 1e-18


def test_accepts_plain_arrays_rejects_asymmetry():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((12, 12))
    a = (g + g.T) / 2
    result, _, _, _ = run(a, PipelineConfig(workers=2, b=3))
    np.testing.assert_allclose(result.lam, np.linalg.eigvalsh(a), atol=1e-12)
    with pytest.raises(ValueError, match="asymmetry"):
        run(g, PipelineConfig(workers=2, b=3))


def test_orders_agree():
    a = _problem(64, 5, kind="Geometric")
    results = {}
    for order in ("pipelined", "sequential", "conventional"):
        res, _, _, _ = run(a, PipelineConfig(workers=4, b=8, order=order))
        results[order] = res
        back = backward_error(a.data, res.Q, res.lam)
        assert back <= 1e-15
    scale = np.abs(results["pipelined"].lam).max()
    for order in ("sequential", "conventional"):
        np.testing.assert_allclose(results[order].lam,
                                   results["pipelined"].lam,
                                   atol=1e-12 * scale)


def test_reruns_are_bitwise_identical():
    a = _problem(64, 8)
    cfg = PipelineConfig(workers=3, b=8)
    r1, _, _, _ = run(a, cfg)
    r2, _, _, _ = run(a, cfg)
    np.testing.assert_array_equal(r1.lam, r2.lam)
    np.testing.assert_array_equal(r1.Q, r2.Q)


def test_single_worker_orders_identical():
    a = _problem(48, 9)
    rp, _, _, _ = run(a, PipelineConfig(workers=1, b=8, order="pipelined"))
    rs, _, _, _ = run(a, PipelineConfig(workers=1, b=8, order="sequential"))
    np.testing.assert_array_equal(rp.lam, rs.lam)
    np.testing.assert_array_equal(rp.Q, rs.Q)


def test_ledger_matches_analytic_counts():
    for n, workers, b in ((60, 2, 4), (96, 4, 8), (91, 3, 7)):
        a = _problem(n, n + workers)
        _, _, ledger, _ = run(a, PipelineConfig(workers=workers, b=b))
        assert ledger.words(stage="SBR") == comm_broadcast_words(n, b)
        assert ledger.words(stage="BC") == (workers - 1) * 2 * b * b
        assert ledger.messages(stage="BC") == workers - 1


def test_eigenvalues_only_mode():
    a = _problem(40, 11)
    cfg = PipelineConfig(workers=2, b=4, want_vectors=False)
    result, _, _, _ = run(a, cfg)
    assert result.Q is None and not result.vectors_computed
    full, _, _, _ = run(a, PipelineConfig(workers=2, b=4))
    np.testing.assert_array_equal(result.lam, full.lam)


def test_trace_file_written(tmp_path):
    path = tmp_path / "trace.ndjson"
    a = _problem(48, 12)
    cfg = PipelineConfig(workers=2, b=8, trace_path=str(path))
    _, events, _, _ = run(a, cfg)
    loaded = TraceLog.from_ndjson(path)
    assert loaded == sorted(events, key=lambda e: (e.t_start, e.t_end,
                                                   e.worker, e.stage))
    validate_trace(loaded, 2)
    stages = {e.stage for e in loaded}
    assert {"SBR", "BC", "Solver", "BC-Back", "FinalMultiply"} <= stages


def test_flop_counter_covers_stages():
    a = _problem(64, 13)
    _, _, _, counter = run(a, PipelineConfig(workers=2, b=8))
    for stage in ("SBR", "BC", "Solver", "SBR-Back", "BC-Back",
                  "FinalMultiply"):
        assert counter.by_stage.get(stage, 0) > 0, stage


def test_worker_failure_is_reported(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("injected fault")

    monkeypatch.setattr(pipeline, "bc_reduce_partition", boom)
    a = _problem(32, 14)
    with pytest.raises(PipelineError, match="worker 0 failed during BC"):
        run(a, PipelineConfig(workers=2, b=4))


def test_too_many_workers_rejected():
    a = _problem(4, 15)
    with pytest.raises(ValueError, match="workers"):
        run(a, PipelineConfig(workers=8, b=2))


def test_tiny_matrices():
    a = np.array([[2.5]])
    result, _, _, _ = run(a, PipelineConfig(workers=1, b=4))
    np.testing.assert_array_equal(result.lam, [2.5])
    np.testing.assert_array_equal(result.Q, [[1.0]])
    a2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    result, _, _, _ = run(a2, PipelineConfig(workers=2, b=4))
    np.testing.assert_allclose(result.lam, [-1.0, 1.0], atol=1e-15)
    assert orthogonality(result.Q) < 4 * EPS


def test_auto_skew_runs_and_reports():
    a = _problem(96, 16)
    result, events, ledger, counter, skew = run_auto_skew(
        a, PipelineConfig(workers=3, b=8))
    assert 0.0 <= skew <= 0.05
    rep = AccuracyReport.from_decomposition(a.data, result.Q, result.lam)
    assert rep.bound_ok
    validate_trace(events, 3)
