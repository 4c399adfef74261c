"""Work partitioning, communication formulas, and the cost-model simulator."""

import numpy as np
import pytest

from pipeevd.messaging import HOST, CommLedger, TraceEvent
from pipeevd.pipeline import PipelineConfig
from pipeevd.sbr import round_schedule
from pipeevd.schedule import (CostModel, calibrated_model,
                              comm_broadcast_words, comm_triangular_words,
                              crossover_bandwidth, mean_idle_fraction,
                              partition, simulate, unit_model, validate_trace)


def test_partition_examples():
    assert partition(10, 3) == [(0, 4), (4, 7), (7, 10)]
    assert partition(12, 4) == [(0, 3), (3, 6), (6, 9), (9, 12)]
    assert partition(5, 1) == [(0, 5)]


def test_partition_covers_and_balances():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = int(rng.integers(1, 9))
        n = int(rng.integers(w, 500))
        ranges = partition(n, w)
        assert ranges[0][0] == 0 and ranges[-1][1] == n
        widths = [c1 - c0 for c0, c1 in ranges]
        assert all(ranges[i][1] == ranges[i + 1][0] for i in range(w - 1))
        assert max(widths) - min(widths) <= 1
        assert all(widths[i] >= widths[i + 1] for i in range(w - 1))


def test_partition_errors():
    with pytest.raises(ValueError):
        partition(4, 0)
    with pytest.raises(ValueError):
        partition(4, 5)


def test_comm_triangular_words_small_case():
    # n=8, b=2: trailing squares 6, 4, 2 give (36 + 16 + 4) / 2
    assert comm_triangular_words(8, 2) == 28.0


def test_comm_triangular_words_closed_form_sample():
    for n, b in ((64, 8), (96, 32), (120, 5), (240, 16)):
        want = n * (n - b) * (2 * n - b) / (12 * b)
        assert comm_triangular_words(n, b) == want


def test_comm_broadcast_words_small_case():
    # 3 m pw words per round, m the rows below the band: 6, 4, 2
    assert comm_broadcast_words(8, 2) == 3 * 2 * (6 + 4 + 2)


def test_comm_broadcast_words_matches_schedule():
    # the panel (2 m pw for W and Y) plus the A W block (m pw), per round
    for seed in range(10):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(1, 9))
        n = int(rng.integers(b + 1, 200))
        want = sum(3 * (n - t0) * pw for _, pw, t0 in round_schedule(n, b))
        assert comm_broadcast_words(n, b) == want


def test_crossover_bandwidth():
    assert crossover_bandwidth(1e13, 0.35e12) == 114
    assert crossover_bandwidth(1.0, 1.0) == 3
    assert crossover_bandwidth(1e10, 4e10) == 0


def test_cost_model_durations():
    m = CostModel(p=100.0, q=10.0, stage_rate={"BC": 0.5})
    assert m.duration("SBR", 200) == 2.0
    assert m.duration("BC", 200) == 4.0
    assert m.duration("SBR", 200, words=50) == 7.0
    assert m.comm_seconds(30) == 3.0
    u = unit_model()
    assert u.duration("SBR", 10**12, words=10**9) == 1.0
    assert u.comm_seconds(10**9) == 0.0


def test_unit_simulation_hand_checked():
    # every task is one tick: the pipelined order overlaps the chase
    # with basis generation, the sequential order cannot
    cfg_p = PipelineConfig(workers=2, b=32, order="pipelined")
    cfg_s = PipelineConfig(workers=2, b=32, order="sequential")
    _, span_p = simulate(unit_model(), cfg_p, 512)
    _, span_s = simulate(unit_model(), cfg_s, 512)
    assert span_p == 6.0
    assert span_s == 7.0


def test_unit_simulation_single_worker_orders_tie():
    cfg_p = PipelineConfig(workers=1, b=32, order="pipelined")
    cfg_s = PipelineConfig(workers=1, b=32, order="sequential")
    _, span_p = simulate(unit_model(), cfg_p, 256)
    _, span_s = simulate(unit_model(), cfg_s, 256)
    assert span_p == span_s == 5.0


def test_simulated_traces_validate_and_pipelining_helps():
    model = calibrated_model()
    for seed in range(15):
        rng = np.random.default_rng(seed)
        w = int(rng.integers(1, 7))
        b = int(rng.integers(2, 33))
        n = int(rng.integers(max(8 * w, 4 * b), 1500))
        skew = float(rng.uniform(0.0, 0.05))
        spans = {}
        for order in ("pipelined", "sequential"):
            cfg = PipelineConfig(workers=w, b=b, order=order, back_skew=skew)
            ledger = CommLedger()
            events, span = simulate(model, cfg, n, ledger)
            validate_trace(events, w, ledger)
            spans[order] = span
        assert spans["pipelined"] <= spans["sequential"]


def test_simulate_rejects_conventional():
    cfg = PipelineConfig(workers=2, b=8, order="conventional")
    with pytest.raises(ValueError, match="pipelined or sequential"):
        simulate(unit_model(), cfg, 64)


def test_simulate_is_deterministic():
    cfg = PipelineConfig(workers=3, b=16, order="pipelined", back_skew=0.03)
    e1, s1 = simulate(calibrated_model(), cfg, 777)
    e2, s2 = simulate(calibrated_model(), cfg, 777)
    assert s1 == s2
    assert e1 == e2


def _shift(ev, dt):
    return TraceEvent(ev.worker, ev.stage, ev.block, ev.t_start + dt,
                      ev.t_end + dt, ev.words)


def test_validate_trace_catches_worker_overlap():
    events = [TraceEvent(0, "SBR", 0, 0, 10),
              TraceEvent(0, "BC", 0, 5, 15)]
    with pytest.raises(ValueError, match="overlaps"):
        validate_trace(events, 1)
    # Comm events may overlap anything
    validate_trace([TraceEvent(0, "SBR", 0, 0, 10),
                    TraceEvent(0, "Comm", 1, 5, 5)], 1)


def test_validate_trace_catches_broken_chains():
    events = [TraceEvent(0, "SBR", 0, 5, 10),
              TraceEvent(1, "SBR", 1, 0, 4)]
    with pytest.raises(ValueError, match="SBR chain"):
        validate_trace(events, 2)
    events = [TraceEvent(0, "BC", 0, 0, 10),
              TraceEvent(1, "BC", 1, 9, 12)]
    with pytest.raises(ValueError, match="BC chain"):
        validate_trace(events, 2)


def test_validate_trace_catches_early_starts():
    events = [TraceEvent(0, "BC", 0, 0, 10),
              TraceEvent(1, "BC-Back", 1, 8, 12)]
    with pytest.raises(ValueError, match="U gather"):
        validate_trace(events, 2)
    events = [TraceEvent(HOST, "Solver", 0, 0, 10),
              TraceEvent(0, "FinalMultiply", 0, 9, 12)]
    with pytest.raises(ValueError, match="solver"):
        validate_trace(events, 1)


def test_validate_trace_checks_overlap_messages():
    cfg = PipelineConfig(workers=3, b=8, order="pipelined")
    ledger = CommLedger()
    events, _ = simulate(unit_model(), cfg, 96, ledger)
    validate_trace(events, 3, ledger)
    ledger.record(0, 1, "BC", 128)  # duplicate boundary handoff
    with pytest.raises(ValueError, match="exactly one"):
        validate_trace(events, 3, ledger)
    stray = CommLedger()
    stray.record(0, 1, "BC", 128)
    stray.record(1, 2, "BC", 128)
    stray.record(0, 2, "BC", 128)  # skips a hop
    with pytest.raises(ValueError, match="stray"):
        validate_trace(events, 3, stray)


def test_mean_idle_fraction_hand_case():
    events = [TraceEvent(0, "SBR", 0, 0, 10),
              TraceEvent(1, "SBR", 0, 5, 10),
              TraceEvent(1, "Comm", 0, 0, 2),
              TraceEvent(HOST, "Solver", 0, 0, 10)]
    # span 10; worker 0 busy 10, worker 1 busy 5; host ignored
    assert mean_idle_fraction(events, 2) == pytest.approx(0.25)
    assert mean_idle_fraction([], 2) == 0.0


def test_calibrated_ratio_improves_with_workers():
    model = calibrated_model()
    prev = 1.0
    for w in (1, 2, 4):
        cfg_p = PipelineConfig(workers=w, b=32, order="pipelined")
        cfg_s = PipelineConfig(workers=w, b=32, order="sequential")
        _, sp = simulate(model, cfg_p, 2048)
        _, ss = simulate(model, cfg_s, 2048)
        ratio = sp / ss
        assert ratio <= prev + 1e-12
        prev = ratio
    assert prev < 0.9
