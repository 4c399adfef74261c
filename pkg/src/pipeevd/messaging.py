"""Counted message channels, the communication ledger, and trace records.

Workers are threads, but nothing here relies on that: every payload
crosses through an ordered per-(src, dst) channel and every receive
names the tag it expects, so any reordering or protocol drift fails
loudly instead of racing.  The ledger counts FP64 payload words per
(src, dst, stage); headers and tags are deliberately not counted, so
analytic word formulas can be asserted with ==.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, asdict

import numpy as np

from .core import BandMatrix, ColumnBlock, ProtocolError, ReflectorPanel

HOST = -1
BROADCAST = -2
RECV_TIMEOUT = 300.0

TRACE_STAGES = ("SBR", "BC", "SBR-Back", "BC-Back", "Solver",
                "FinalMultiply", "Comm")


def payload_words(payload) -> int:
    """FP64 words in a message payload (arrays only, recursively)."""
    if payload is None:
        return 0
    if isinstance(payload, np.ndarray):
        return int(payload.size)
    if isinstance(payload, BandMatrix):
        return int(payload.bands.size)
    if isinstance(payload, ColumnBlock):
        return int(payload.data.size)
    if isinstance(payload, ReflectorPanel):
        z = 0 if payload.Z is None else payload.Z.size
        return int(payload.W.size + payload.Y.size + z)
    if isinstance(payload, (tuple, list)):
        return sum(payload_words(p) for p in payload)
    if hasattr(payload, "values") and isinstance(getattr(payload, "values"),
                                                 np.ndarray):
        return int(payload.values.size)
    return 0


@dataclass
class TraceEvent:
    worker: int
    stage: str
    block: int
    t_start: int
    t_end: int
    words: int = 0

    def __post_init__(self):
        if self.stage not in TRACE_STAGES:
            raise ValueError(f"unknown trace stage {self.stage!r}")
        if self.t_end < self.t_start:
            raise ValueError("event ends before it starts")

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


class TraceLog:
    """Thread-safe append-only event collection."""

    def __init__(self):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def add(self, worker: int, stage: str, block: int, t_start: int,
            t_end: int, words: int = 0) -> TraceEvent:
        ev = TraceEvent(worker, stage, block, int(t_start), int(t_end),
                        int(words))
        with self._lock:
            self._events.append(ev)
        return ev

    def events(self) -> list[TraceEvent]:
        with self._lock:
            evs = list(self._events)
        return sorted(evs, key=lambda e: (e.t_start, e.t_end, e.worker, e.stage))

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    def to_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.events():
                fh.write(json.dumps(asdict(ev)) + "\n")

    @staticmethod
    def from_ndjson(path) -> list[TraceEvent]:
        out = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(TraceEvent(**json.loads(line)))
        return sorted(out, key=lambda e: (e.t_start, e.t_end, e.worker, e.stage))


class CommLedger:
    """Words and message counts per (src, dst, stage) channel.

    Broadcast traffic is recorded once with dst = BROADCAST (the wire
    carries one copy in the modeled fabric), point-to-point per ordered
    pair.  Counts only ever grow.
    """

    def __init__(self):
        self._words: dict[tuple[int, int, str], int] = {}
        self._msgs: dict[tuple[int, int, str], int] = {}
        self._lock = threading.Lock()

    def record(self, src: int, dst: int, stage: str, words: int) -> None:
        words = int(words)
        if words < 0:
            raise ValueError("message word counts only increase")
        key = (int(src), int(dst), stage)
        with self._lock:
            self._words[key] = self._words.get(key, 0) + words
            self._msgs[key] = self._msgs.get(key, 0) + 1

    def _select(self, table, stage, src, dst) -> int:
        with self._lock:
            items = list(table.items())
        total = 0
        for (s, d, st), v in items:
            if stage is not None and st != stage:
                continue
            if src is not None and s != src:
                continue
            if dst is not None and d != dst:
                continue
            total += v
        return total

    def words(self, stage=None, src=None, dst=None) -> int:
        return self._select(self._words, stage, src, dst)

    def messages(self, stage=None, src=None, dst=None) -> int:
        return self._select(self._msgs, stage, src, dst)

    @property
    def total_words(self) -> int:
        return self.words()

    def stages(self) -> list[str]:
        with self._lock:
            return sorted({k[2] for k in self._words})

    def to_csv(self) -> str:
        with self._lock:
            items = sorted(self._words.items())
        lines = ["src,dst,stage,words"]
        for (s, d, st), v in items:
            lines.append(f"{s},{d},{st},{v}")
        return "\n".join(lines) + "\n"


class Channel:
    """Ordered point-to-point message queue with tag checking."""

    def __init__(self, src: int, dst: int):
        self.src = src
        self.dst = dst
        self._q: queue.Queue = queue.Queue()

    def put(self, tag, payload) -> None:
        self._q.put((tag, payload))

    def get(self, expected_tag, timeout: float = RECV_TIMEOUT):
        try:
            tag, payload = self._q.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError(
                f"worker {self.dst} timed out waiting for {expected_tag!r} "
                f"from {self.src}") from None
        if tag != expected_tag:
            raise ProtocolError(
                f"worker {self.dst} expected {expected_tag!r} from "
                f"{self.src}, got {tag!r}")
        return payload

    def poll(self):
        """Non-blocking look at whether anything is waiting."""
        return not self._q.empty()


class Router:
    """All channels of one run plus the ledger and optional Comm tracing."""

    def __init__(self, workers: int, ledger: CommLedger | None = None,
                 trace: TraceLog | None = None, clock=None):
        self.workers = workers
        self.ledger = ledger if ledger is not None else CommLedger()
        self.trace = trace
        self.clock = clock
        ids = list(range(workers)) + [HOST]
        self._chan = {(s, d): Channel(s, d)
                      for s in ids for d in ids if s != d}

    def channel(self, src: int, dst: int) -> Channel:
        return self._chan[(src, dst)]

    def _note(self, src: int, dst: int, words: int) -> None:
        if self.trace is not None and self.clock is not None:
            t = self.clock()
            self.trace.add(src, "Comm", dst, t, t, words)

    def send(self, src: int, dst: int, stage: str, tag, payload,
             words: int | None = None) -> None:
        w = payload_words(payload) if words is None else int(words)
        self.ledger.record(src, dst, stage, w)
        self._note(src, dst, w)
        self._chan[(src, dst)].put(tag, payload)

    def recv(self, dst: int, src: int, expected_tag,
             timeout: float = RECV_TIMEOUT):
        return self._chan[(src, dst)].get(expected_tag, timeout)

    def broadcast(self, src: int, stage: str, tag, payload,
                  words: int | None = None, include_host: bool = False) -> None:
        """Deliver to every other worker; counted once (one wire copy)."""
        w = payload_words(payload) if words is None else int(words)
        self.ledger.record(src, BROADCAST, stage, w)
        self._note(src, BROADCAST, w)
        for d in range(self.workers):
            if d != src:
                self._chan[(src, d)].put(tag, payload)
        if include_host and src != HOST:
            self._chan[(src, HOST)].put(tag, payload)
