"""Multi-worker orchestration of the two-stage eigensolver.

Workers are long-lived threads, one per virtual device, that talk only
through the ordered channels of a Router; every word crossing a channel
is counted in the CommLedger.  The band reduction runs cooperatively
over the shared round schedule, the bulge chase is relayed worker by
worker through the host, and the tridiagonal solver runs in a host-side
thread while workers accumulate their back-transform rows.

The stage dependencies are enforced by the messages themselves: a
worker cannot start its bulge-chasing turn before the predecessor's
overlap block and the host-staged band tail have both arrived, the
BC-Back block multiply needs the merged reflector set that the host
only broadcasts after the last gather, and the final multiply needs
Q_d, which the host only publishes once the solver thread has joined.
An explicit completion signal relayed along the worker chain orders the
per-worker band-reduction phases the same way.

order="pipelined" lets each worker fold accumulated reflector panels
into its Q_s rows whenever it is otherwise waiting; "sequential" holds
that work behind global barriers; "conventional" skips the row
accumulator entirely and applies the reflectors to columns of Q_d, as
a reference path.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .backtrans import RowAccumulator, back_plan_sizes, bc_back_apply, final_gemm
from .bulge import BulgeReflectorSet, bc_reduce_partition
from .core import (BandMatrix, FlopCounter, ProtocolError, ReflectorPanel,
                   SymmetricMatrix, TridiagonalMatrix, apply_block_reflector,
                   sym_rank2k_update)
from .messaging import HOST, CommLedger, Router, TraceLog
from .sbr import panel_qr, round_schedule
from .schedule import partition
from .tridiag import EigenResult, tridiag_eig

ORDERS = ("pipelined", "sequential", "conventional")

_POLL = 0.0005


class PipelineError(RuntimeError):
    """A worker or the host failed; the message names who and in which stage."""


class _Abort(Exception):
    """Internal: another participant failed, unwind quietly."""


@dataclass
class PipelineConfig:
    """Knobs of one pipeline run.

    back_skew ramps the back-transform row blocks toward earlier
    workers: they finish their bulge-chasing turn first and therefore
    have the longest window for accumulation work.
    """

    workers: int
    b: int = 32
    order: str = "pipelined"
    back_skew: float = 0.0
    seed: int | None = None
    trace_path: str | None = None
    want_vectors: bool = True

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.b < 1:
            raise ValueError("bandwidth must be >= 1")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, not {self.order!r}")
        if not 0.0 <= self.back_skew <= 0.05:
            raise ValueError(f"back_skew {self.back_skew} outside [0, 0.05]")


class _Run:
    """Shared state of one run: channels, clock, ledgers, error board."""

    def __init__(self, a: np.ndarray, cfg: PipelineConfig):
        self.cfg = cfg
        self.n = int(a.shape[0])
        # a bandwidth >= n would leave nothing to reduce; the 1x1
        # matrix is already "banded" with no off-diagonals at all
        self.b = min(cfg.b, self.n - 1) if self.n > 1 else 0
        self.a = a
        self.ranges = partition(self.n, cfg.workers)
        self.rounds = round_schedule(self.n, self.b) if self.b else []
        sizes = back_plan_sizes(self.n, cfg.workers, cfg.back_skew)
        bounds = [0]
        for s in sizes:
            bounds.append(bounds[-1] + s)
        self.back_rows = [(bounds[i], bounds[i + 1])
                          for i in range(cfg.workers)]
        self.owner_of = [self._owner(c0) for c0, _, _ in self.rounds]
        self.owned = [[] for _ in range(cfg.workers)]
        for idx, o in enumerate(self.owner_of):
            self.owned[o].append(idx)
        # sig_round[w]: the round during which worker w consumes the
        # band-reduction completion signal from w-1.  The signal is
        # emitted inside the last round owned by the nearest
        # predecessor that owns any; workers owning no panel forward
        # it within the same round.
        self.sig_round: list[int | None] = [None] * cfg.workers
        for w in range(1, cfg.workers):
            prev = self.owned[w - 1]
            self.sig_round[w] = prev[-1] if prev else self.sig_round[w - 1]
        self.counter = FlopCounter()
        self.ledger = CommLedger()
        self.trace = TraceLog()
        self._t0 = time.perf_counter_ns()
        self.router = Router(cfg.workers, ledger=self.ledger,
                             trace=self.trace, clock=self.now)
        self.abort = threading.Event()
        self.errors: dict[int, tuple[str, BaseException]] = {}
        self._err_lock = threading.Lock()

    def _owner(self, col: int) -> int:
        for w, (lo, hi) in enumerate(self.ranges):
            if lo <= col < hi:
                return w
        raise AssertionError(f"column {col} outside all ranges")

    def now(self) -> int:
        return time.perf_counter_ns() - self._t0

    def fail(self, who: int, stage: str, exc: BaseException) -> None:
        with self._err_lock:
            self.errors.setdefault(who, (stage, exc))
        self.abort.set()


def _recv(run: _Run, dst: int, src: int, tag, timeout: float = 120.0):
    """Ordered receive that bails out promptly when the run is aborting."""
    ch = run.router.channel(src, dst)
    deadline = time.monotonic() + timeout
    while True:
        if run.abort.is_set():
            raise _Abort()
        if ch.poll():
            return ch.get(tag, timeout=5.0)
        if time.monotonic() > deadline:
            raise ProtocolError(f"timed out waiting for {tag!r} from {src}")
        time.sleep(_POLL)


def _uset_words(u: BulgeReflectorSet) -> int:
    # four index/offset arrays plus tau plus the padded reflector table
    return 4 * len(u) + int(u.tau.size) + int(u.v.size)


def _worker_main(run: _Run, w: int) -> None:
    st = {"stage": "SBR"}
    try:
        _worker_body(run, w, st)
    except _Abort:
        pass
    except BaseException as exc:
        run.fail(w, st["stage"], exc)


def _worker_body(run: _Run, w: int, st: dict) -> None:
    cfg = run.cfg
    n, b, nw = run.n, run.b, cfg.workers
    router = run.router
    vectors = cfg.want_vectors
    c0w, c1w = run.ranges[w]
    block = np.array(run.a[:, c0w:c1w], order="F")
    panels: list[ReflectorPanel] = []

    # ---------------- stage one: cooperative band reduction ----------------
    st["stage"] = "SBR"
    my_rounds = run.owned[w]
    first_owned = my_rounds[0] if my_rounds else None
    last_owned = my_rounds[-1] if my_rounds else None
    phase = [None, None]

    def _emit_signal():
        if w + 1 < nw:
            router.send(w, w + 1, "Signal", "sbr-finished", None, words=0)

    def _consume_signal():
        _recv(run, w, w - 1, "sbr-finished")
        if first_owned is None:
            # nothing of the band is ours: a zero-length phase, relayed on
            t = run.now()
            run.trace.add(w, "SBR", w, t, t)
            _emit_signal()

    for idx, (c0, pw, t0) in enumerate(run.rounds):
        owner = run.owner_of[idx]
        m = n - t0
        take_signal = w > 0 and idx == run.sig_round[w]
        if take_signal and owner != w - 1:
            # w-1 owns nothing here and forwards at the top of the round
            _consume_signal()
        if owner == w:
            if idx == first_owned:
                phase[0] = run.now()
            # gather the panel (the owner always holds its leading column)
            panel = np.zeros((m, pw), order="F")
            hi = min(c0 + pw, c1w)
            panel[:, :hi - c0] = block[t0:, c0 - c0w:hi - c0w]
            for x in range(nw):
                if x == w:
                    continue
                xlo = max(c0, run.ranges[x][0])
                xhi = min(c0 + pw, run.ranges[x][1])
                if xlo < xhi:
                    piece = _recv(run, w, x, ("panel", idx))
                    panel[:, xlo - c0:xhi - c0] = piece
            pan = panel_qr(panel, col_offset=c0, counter=run.counter)
            block[t0:, c0 - c0w:hi - c0w] = panel[:, :hi - c0]
            for x in range(nw):
                if x == w:
                    continue
                xlo = max(c0, run.ranges[x][0])
                xhi = min(c0 + pw, run.ranges[x][1])
                if xlo < xhi:
                    router.send(w, x, "SBR-panel", ("panel-r", idx),
                                np.array(panel[:, xlo - c0:xhi - c0],
                                         order="F"))
            phase[1] = run.now()
            if idx == last_owned:
                # phase end is on record; the signal must precede the
                # broadcasts below on the shared channel
                _emit_signal()
            router.broadcast(w, "SBR", ("wy", idx), pan)
        else:
            xlo = max(c0, c0w)
            xhi = min(c0 + pw, c1w)
            if xlo < xhi:
                router.send(w, owner, "SBR-panel", ("panel", idx),
                            np.array(block[t0:, xlo - c0w:xhi - c0w],
                                     order="F"))
                block[t0:, xlo - c0w:xhi - c0w] = \
                    _recv(run, w, owner, ("panel-r", idx))
            if take_signal and owner == w - 1:
                _consume_signal()
            pan = _recv(run, w, owner, ("wy", idx))
        panels.append(pan)

        # AW by symmetry: each worker contributes the rows its columns
        # can produce, A[t0:, rows].T @ W, so the trailing matrix itself
        # never crosses a channel
        rlo = max(t0, c0w)
        aw_piece = None
        if rlo < c1w:
            aw_piece = block[t0:, rlo - c0w:c1w - c0w].T @ pan.W
            run.counter.add("SBR", (c1w - rlo) * m * pw)
            router.broadcast(w, "SBR", ("aw", idx), aw_piece)
        pieces = []
        for x in range(nw):
            xlo = max(t0, run.ranges[x][0])
            if xlo >= run.ranges[x][1]:
                continue
            if x == w:
                pieces.append(aw_piece)
            else:
                pieces.append(_recv(run, w, x, ("aw", idx)))
        aw = pieces[0] if len(pieces) == 1 else np.vstack(pieces)
        z = aw - 0.5 * (pan.Y @ (pan.W.T @ aw))
        run.counter.add("SBR", 2 * m * pw * pw)

        # two-sided update restricted to our columns
        if rlo < c1w:
            cs, ce = rlo - c0w, c1w - c0w
            nc = c1w - rlo
            zlo = rlo - t0
            yc = pan.Y[zlo:zlo + nc]
            zc = z[zlo:zlo + nc]
            if zlo > 0:
                strip = block[t0:rlo, cs:ce]
                strip -= pan.Y[:zlo] @ zc.T
                strip -= z[:zlo] @ yc.T
                run.counter.add("SBR", 2 * zlo * nc * pw)
            sym_rank2k_update(block[rlo:c1w, cs:ce], yc, zc,
                              counter=run.counter, stage="SBR")
            if c1w < n:
                zhi = c1w - t0
                strip = block[c1w:, cs:ce]
                strip -= pan.Y[zhi:] @ zc.T
                strip -= z[zhi:] @ yc.T
                run.counter.add("SBR", 2 * (m - zhi) * nc * pw)

        # ragged final round: the coupling columns right of the panel
        # still need Q^T from the left
        if pw < b:
            klo = max(c0 + pw, c0w)
            khi = min(t0, c1w)
            if klo < khi:
                cp = block[t0:, klo - c0w:khi - c0w]
                cp -= pan.Y @ (pan.W.T @ cp)
                run.counter.add("SBR", 2 * m * (khi - klo) * pw)

    if my_rounds:
        run.trace.add(w, "SBR", w, phase[0], phase[1])

    # ---------------- stage two: relayed bulge chasing ----------------
    st["stage"] = "BC"
    width = c1w - c0w
    bands_local = np.zeros((b + 1, width))
    for k in range(b + 1):
        nv = min(width, n - k - c0w)
        if nv > 0:
            j = np.arange(nv)
            bands_local[k, :nv] = block[c0w + k + j, j]
    router.send(w, HOST, "BandStage", "band-piece", bands_local)

    acc = None
    nxt = [0]
    burst = [None]
    if vectors and cfg.order != "conventional":
        acc = RowAccumulator(n, run.back_rows[w])

    def _genq_one():
        if burst[0] is None:
            burst[0] = run.now()
        acc.apply_panel(panels[nxt[0]], counter=run.counter)
        nxt[0] += 1

    def _genq_flush():
        if burst[0] is not None:
            run.trace.add(w, "SBR-Back", w, burst[0], run.now())
            burst[0] = None

    if cfg.order == "pipelined":
        # fold panels into the accumulator while the chasing turn is
        # still queued behind the predecessors
        host_ch = router.channel(HOST, w)
        prev_ch = router.channel(w - 1, w) if w > 0 else None
        while True:
            if run.abort.is_set():
                raise _Abort()
            if host_ch.poll() and (prev_ch is None or prev_ch.poll()):
                break
            if acc is not None and nxt[0] < len(panels):
                _genq_one()
            else:
                _genq_flush()
                time.sleep(_POLL)
        _genq_flush()
    incoming = _recv(run, w, w - 1, "overlap") if w > 0 else None
    tail = _recv(run, w, HOST, "band-tail")
    t_bc = run.now()
    res = bc_reduce_partition(tail, b, c0w, c1w, incoming,
                              w == nw - 1, counter=run.counter)
    run.trace.add(w, "BC", w, t_bc, run.now())
    if w + 1 < nw:
        router.send(w, w + 1, "BC", "overlap", res.outgoing)
    router.send(w, HOST, "Gather", "bc-result",
                (res.d_part, res.e_part, res.tail))
    if vectors:
        router.send(w, HOST, "U-gather", "uset", res.reflectors,
                    words=_uset_words(res.reflectors))
    if not vectors:
        return

    # ---------------- back transformation ----------------
    if cfg.order == "conventional":
        # reference path: reflectors hit Q_d columns directly, so all of
        # it waits for the solver
        st["stage"] = "BC-Back"
        merged = _recv(run, w, HOST, "uset")
        qcols = _recv(run, w, HOST, "qd-cols")
        t = run.now()
        zb = bc_back_apply(merged, qcols, counter=run.counter,
                           direction="conventional")
        run.trace.add(w, "BC-Back", w, t, run.now())
        st["stage"] = "SBR-Back"
        t = run.now()
        for pan in reversed(panels):
            mp = pan.W.shape[0]
            apply_block_reflector(zb[n - mp:, :], pan, side="left",
                                  counter=run.counter, stage="SBR-Back")
        run.trace.add(w, "SBR-Back", w, t, run.now())
        router.send(w, HOST, "Result", "q-cols", zb)
        return

    if cfg.order == "sequential":
        st["stage"] = "SBR-Back"
        _recv(run, w, HOST, "genq-go")
        if panels:
            t = run.now()
            while nxt[0] < len(panels):
                acc.apply_panel(panels[nxt[0]], counter=run.counter)
                nxt[0] += 1
            run.trace.add(w, "SBR-Back", w, t, run.now())
        router.send(w, HOST, "Barrier", "genq-done", None, words=0)
    elif nxt[0] < len(panels):
        # drain whatever the preemptive loop did not get to
        st["stage"] = "SBR-Back"
        t = run.now()
        while nxt[0] < len(panels):
            acc.apply_panel(panels[nxt[0]], counter=run.counter)
            nxt[0] += 1
        run.trace.add(w, "SBR-Back", w, t, run.now())

    st["stage"] = "BC-Back"
    merged = _recv(run, w, HOST, "uset")
    t = run.now()
    ub = bc_back_apply(merged, acc.matrix().T, counter=run.counter)
    run.trace.add(w, "BC-Back", w, t, run.now())
    if cfg.order == "sequential":
        router.send(w, HOST, "Barrier", "bcback-done", None, words=0)

    st["stage"] = "FinalMultiply"
    qd = _recv(run, w, HOST, "qd")
    t = run.now()
    qrows = final_gemm(ub.T, qd, counter=run.counter)
    run.trace.add(w, "FinalMultiply", w, t, run.now())
    router.send(w, HOST, "Result", "q-rows", qrows)


def _join_solver(run: _Run, th: threading.Thread, box: dict) -> None:
    th.join()
    if "res" not in box:
        raise _Abort()


def _host_main(run: _Run) -> EigenResult:
    cfg = run.cfg
    n, b, nw = run.n, run.b, cfg.workers
    router = run.router
    vectors = cfg.want_vectors

    pieces = [_recv(run, HOST, x, "band-piece") for x in range(nw)]
    band = BandMatrix(n, b, np.concatenate(pieces, axis=1))

    # a worker's chasing turn begins when its predecessor's residual
    # band tail comes back through the host
    d_parts, e_parts = [], []
    tail = band
    for x in range(nw):
        router.send(HOST, x, "BandStage", "band-tail", tail)
        d, e, tail = _recv(run, HOST, x, "bc-result")
        d_parts.append(d)
        e_parts.append(e)
    tri = TridiagonalMatrix(np.concatenate(d_parts), np.concatenate(e_parts))

    box: dict = {}

    def _solve():
        try:
            t = run.now()
            r = tridiag_eig(tri, want_vectors=vectors, counter=run.counter)
            run.trace.add(HOST, "Solver", 0, t, run.now())
            box["res"] = r
        except _Abort:
            pass
        except BaseException as exc:
            run.fail(HOST, "Solver", exc)

    th = threading.Thread(target=_solve, name="tridiag-solver")
    th.start()

    if not vectors:
        _join_solver(run, th, box)
        return box["res"]

    parts = [_recv(run, HOST, x, "uset") for x in range(nw)]
    merged = BulgeReflectorSet.merge(parts)
    uw = _uset_words(merged)

    if cfg.order == "sequential":
        for x in range(nw):
            router.send(HOST, x, "Barrier", "genq-go", None, words=0)
        for x in range(nw):
            _recv(run, HOST, x, "genq-done")
        _join_solver(run, th, box)
        router.broadcast(HOST, "U-gather", "uset", merged, words=uw)
        for x in range(nw):
            _recv(run, HOST, x, "bcback-done")
        router.broadcast(HOST, "Qd", "qd", box["res"].Q)
        q = np.empty((n, n))
        for x in range(nw):
            lo, hi = run.back_rows[x]
            q[lo:hi, :] = _recv(run, HOST, x, "q-rows")
    elif cfg.order == "conventional":
        router.broadcast(HOST, "U-gather", "uset", merged, words=uw)
        _join_solver(run, th, box)
        qd = box["res"].Q
        for x in range(nw):
            lo, hi = run.back_rows[x]
            router.send(HOST, x, "Qd", "qd-cols",
                        np.array(qd[:, lo:hi], order="F"))
        q = np.empty((n, n), order="F")
        for x in range(nw):
            lo, hi = run.back_rows[x]
            q[:, lo:hi] = _recv(run, HOST, x, "q-cols")
    else:
        router.broadcast(HOST, "U-gather", "uset", merged, words=uw)
        _join_solver(run, th, box)
        router.broadcast(HOST, "Qd", "qd", box["res"].Q)
        q = np.empty((n, n))
        for x in range(nw):
            lo, hi = run.back_rows[x]
            q[lo:hi, :] = _recv(run, HOST, x, "q-rows")

    return EigenResult(lam=box["res"].lam, Q=q, vectors_computed=True)


def run(a, cfg: PipelineConfig):
    """Factor A = Q diag(lam) Q^T with cfg.workers cooperating threads.

    Returns (result, events, ledger, counter): the EigenResult, the
    time-sorted trace events, the communication ledger, and the
    multiply-add counter.  The stage protocol is fixed by the message
    order, not by thread timing, so reruns with the same flags produce
    bit-identical results.
    """
    if isinstance(a, SymmetricMatrix):
        dense = a.data
    else:
        dense = SymmetricMatrix.from_dense(
            np.asarray(a, dtype=np.float64)).data
    run_ = _Run(dense, cfg)
    threads = [threading.Thread(target=_worker_main, args=(run_, w),
                                name=f"worker-{w}")
               for w in range(cfg.workers)]
    for t in threads:
        t.start()
    result = None
    try:
        result = _host_main(run_)
    except _Abort:
        pass
    except BaseException as exc:
        run_.fail(HOST, "Host", exc)
    for t in threads:
        t.join(timeout=60.0)
    if run_.errors:
        who = min((k for k in run_.errors if k >= 0), default=HOST)
        stage, exc = run_.errors[who]
        name = "host" if who == HOST else f"worker {who}"
        raise PipelineError(f"{name} failed during {stage}: {exc!r}") from exc
    events = run_.trace.events()
    if cfg.trace_path:
        run_.trace.to_ndjson(cfg.trace_path)
    return result, events, run_.ledger, run_.counter


def run_auto_skew(a, cfg: PipelineConfig):
    """Run once, pick back_skew from the measured idle gap, run again.

    One feedback iteration: the idle-fraction gap between the last and
    first worker, halved and clamped to the 5% plan corridor, becomes
    the skew of the second run.  Returns the second run's outputs plus
    the skew that was used.
    """
    first = run(a, cfg)
    busy = [0] * cfg.workers
    t_lo, t_hi = None, 0
    for ev in first[1]:
        if ev.worker < 0 or ev.stage == "Comm":
            continue
        busy[ev.worker] += ev.duration
        t_hi = max(t_hi, ev.t_end)
        t_lo = ev.t_start if t_lo is None else min(t_lo, ev.t_start)
    span = max(1, t_hi - (t_lo or 0))
    idle = [1.0 - bz / span for bz in busy]
    skew = min(0.05, max(0.0, 0.5 * (idle[-1] - idle[0])))
    cfg2 = replace(cfg, back_skew=round(skew, 4))
    out = run(a, cfg2)
    return out + (cfg2.back_skew,)
