"""Back transformation: accumulate eigenvectors from stored reflectors.

Three pieces live here.  sbr_back_* turns the WY panels of the band
reduction into columns (or rows) of Q_s.  bc_back_apply replays the
bulge-chasing reflectors u_ij over a block of Q_s^T in a grouped,
dependency-respecting order.  final_gemm glues the two stages to the
tridiagonal eigenvectors, Q = Q_sb Q_d, one block of rows per worker.

Block sizes per worker come from make_back_plan: a linear ramp around a
base size, earlier workers slightly larger, each within 5% of base.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import FlopCounter, ReflectorPanel, apply_block_reflector, matmul_counted
from .bulge import BulgeReflectorSet

DEFAULT_GROUP_SIZE = 4


# ---------------------------------------------------------------------------
# block planning


@dataclass
class BackPlan:
    """Per-worker column block sizes for the eigenvector matrix."""

    sizes: list[int]
    base: int

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        if any(s < 1 for s in self.sizes):
            raise ValueError("empty back-transform block")
        if any(self.sizes[i] < self.sizes[i + 1]
               for i in range(len(self.sizes) - 1)):
            raise ValueError("block sizes must be non-increasing")
        for s in self.sizes:
            # |s - base| <= 0.05 base, kept in integers so the check is exact
            if 20 * abs(s - self.base) > self.base:
                raise ValueError(f"block size {s} deviates more than 5% "
                                 f"from base {self.base}")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def column_ranges(self) -> list[tuple[int, int]]:
        out, at = [], 0
        for s in self.sizes:
            out.append((at, at + s))
            at += s
        return out


def make_back_plan(n: int, workers: int, base: int, skew: float) -> BackPlan:
    """Ramped block sizes b_i = round(base (1 + skew (1 - 2i/(w-1)))).

    The ramp gives earlier workers more columns (they are the ones whose
    BC-Back can start first), then integer repair nudges sizes until
    they sum to n, preferring the size closest to its ideal value and
    never leaving the 5% corridor.  Raises ValueError when n cannot be
    reached inside the corridor.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if not 0.0 <= skew <= 0.05:
        raise ValueError(f"skew {skew} outside [0, 0.05]")
    if base < 1:
        raise ValueError("base must be >= 1")
    if workers == 1:
        ideal = [float(n)]
        sizes = [n]
        if 20 * abs(n - base) > base:
            raise ValueError(f"cannot split {n} columns into 1 block of "
                             f"base {base} within 5%")
        return BackPlan(sizes=sizes, base=base)
    ideal = [base * (1.0 + skew * (1.0 - 2.0 * i / (workers - 1)))
             for i in range(workers)]
    sizes = [round(x) for x in ideal]
    for i in range(workers):
        while 20 * abs(sizes[i] - base) > base:
            sizes[i] += 1 if sizes[i] < base else -1
    delta = n - sum(sizes)
    step = 1 if delta > 0 else -1
    for _ in range(abs(delta)):
        best, best_cost = -1, None
        for i in range(workers):
            cand = sizes[i] + step
            if cand >= 1 and 20 * abs(cand - base) <= base:
                cost = abs(cand - ideal[i])
                if best_cost is None or cost < best_cost:
                    best, best_cost = i, cost
        if best < 0:
            raise ValueError(f"cannot split {n} columns into {workers} "
                             f"blocks of base {base} within 5%")
        sizes[best] += step
    sizes.sort(reverse=True)
    return BackPlan(sizes=sizes, base=base)


def back_plan_sizes(n: int, workers: int, skew: float) -> list[int]:
    """Row-block sizes for the back transform, one per worker.

    Uses the ramped plan with base round(n / workers).  When n is so
    small that no integer plan fits the 5% corridor (blocks under ~20
    columns) the skew is ignored and an even split is used instead.
    """
    if not 0.0 <= skew <= 0.05:
        raise ValueError(f"skew {skew} outside [0, 0.05]")
    try:
        return make_back_plan(n, workers, max(1, round(n / workers)), skew).sizes
    except ValueError:
        base, rem = divmod(n, workers)
        return [base + (1 if i < rem else 0) for i in range(workers)]


# ---------------------------------------------------------------------------
# SBR-Back


def sbr_back_accumulate(factors, cols: tuple[int, int],
                        counter: FlopCounter | None = None) -> np.ndarray:
    """Columns [cols[0], cols[1]) of Q_s = (I - W_1 Y_1^T) ... (I - W_p Y_p^T).

    Panels are applied to identity columns in reverse creation order
    (the last panel touches the fewest rows, so the work ramps up as the
    product grows toward the full matrix).
    """
    n = factors.n
    lo, hi = cols
    if not 0 <= lo <= hi <= n:
        raise ValueError("column range out of bounds")
    q = np.zeros((n, hi - lo), order="F")
    q[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
    for panel in reversed(factors.panels):
        t0 = n - panel.W.shape[0]
        apply_block_reflector(q[t0:, :], panel, side="left",
                              counter=counter, stage="SBR-Back")
    return q


class RowAccumulator:
    """Rows of Q_s built panel by panel in creation order.

    Holds M = I[rows, :] and folds in each panel from the right as it
    arrives, M <- M (I - W Y^T), so the accumulation can overlap the
    band reduction that is still producing panels.
    """

    def __init__(self, n: int, rows: tuple[int, int]):
        lo, hi = rows
        if not 0 <= lo <= hi <= n:
            raise ValueError("row range out of bounds")
        self.n = n
        self.rows = (lo, hi)
        self.m = np.zeros((hi - lo, n))
        self.m[np.arange(hi - lo), np.arange(lo, hi)] = 1.0
        self._applied = 0
        self._last_offset = -1

    def apply_panel(self, panel: ReflectorPanel,
                    counter: FlopCounter | None = None) -> None:
        if panel.col_offset <= self._last_offset:
            raise ValueError("panels must arrive in ascending creation order")
        self._last_offset = panel.col_offset
        t0 = self.n - panel.W.shape[0]
        apply_block_reflector(self.m[:, t0:], panel, side="right",
                              counter=counter, stage="SBR-Back")
        self._applied += 1

    @property
    def panels_applied(self) -> int:
        return self._applied

    def matrix(self) -> np.ndarray:
        return self.m


def sbr_back_rows(factors, rows: tuple[int, int],
                  counter: FlopCounter | None = None) -> np.ndarray:
    """Rows [rows[0], rows[1]) of Q_s, via forward panel application."""
    acc = RowAccumulator(factors.n, rows)
    for panel in factors.panels:
        acc.apply_panel(panel, counter)
    return acc.matrix()


# ---------------------------------------------------------------------------
# BC-Back


@dataclass
class GroupTile:
    """A cache-sized batch of reflectors: sweeps of one group G_k inside
    one chase-step block B_j, applied back to back so their overlapping
    target rows stay resident."""

    k: int
    j: int
    positions: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.positions)


def application_order(u: BulgeReflectorSet, direction: str = "reordered",
                      grouped: bool = True,
                      group_size: int = DEFAULT_GROUP_SIZE) -> np.ndarray:
    """Positions of u's reflectors in a dependency-valid order.

    'reordered' is the order for applying Q_b^T (creation order is
    valid; the grouped version walks sweep-groups G_k forward and chase
    steps B_j bottom to top).  'conventional' applies Q_b itself and
    runs everything the opposite way.
    """
    i, j = u.i_idx, u.j_idx
    if len(u) == 0:
        return np.zeros(0, dtype=np.int64)
    k = i // group_size
    if direction == "reordered":
        if grouped:
            return np.lexsort((i, -j, k))
        return np.lexsort((j, i))
    if direction == "conventional":
        if grouped:
            return np.lexsort((-i, j, -k))
        return np.lexsort((j, i))[::-1].copy()
    raise ValueError(f"unknown direction {direction!r}")


def group_tiles(u: BulgeReflectorSet, direction: str = "reordered",
                group_size: int = DEFAULT_GROUP_SIZE) -> list[GroupTile]:
    order = application_order(u, direction, True, group_size)
    tiles: list[GroupTile] = []
    for p in order:
        k = int(u.i_idx[p]) // group_size
        j = int(u.j_idx[p])
        if not tiles or tiles[-1].k != k or tiles[-1].j != j:
            tiles.append(GroupTile(k=k, j=j))
        tiles[-1].positions.append(int(p))
    return tiles


@njit(cache=True, nogil=True)
def _rank1_seq(q, order, row0, length, tau, v, dots):  # pragma: no cover
    m = q.shape[1]
    macs = 0
    for oo in range(order.size):
        p = order[oo]
        r0 = row0[p]
        ell = length[p]
        t = tau[p]
        for kk in range(m):
            dots[kk] = 0.0
        for r in range(ell):
            vr = v[p, r]
            for kk in range(m):
                dots[kk] += vr * q[r0 + r, kk]
        for kk in range(m):
            dots[kk] *= t
        for r in range(ell):
            vr = v[p, r]
            for kk in range(m):
                q[r0 + r, kk] -= vr * dots[kk]
        macs += 2 * ell * m
    return macs


def bc_back_apply(u: BulgeReflectorSet, qs_t_block: np.ndarray,
                  counter: FlopCounter | None = None,
                  direction: str = "reordered", grouped: bool = True,
                  group_size: int = DEFAULT_GROUP_SIZE,
                  debug_validate: bool = False,
                  inplace: bool = False) -> np.ndarray:
    """Apply all bulge reflectors to a block of columns.

    direction='reordered' computes Q_b^T X (the pipelined path, X being
    a block of Q_s^T columns); 'conventional' computes Q_b X (reference
    path, X being a block of Q_d columns).  Rank-1 updates only, never a
    compact-WY regrouping: per reflector 2 len m multiply-adds, about
    m n^2 total for an n x m block.

    The input is copied unless inplace=True and the layout already
    suits the kernel; the result is always the returned array.
    """
    if inplace and isinstance(qs_t_block, np.ndarray) \
            and qs_t_block.dtype == np.float64 and qs_t_block.flags.c_contiguous:
        q = qs_t_block
    else:
        q = np.array(qs_t_block, dtype=np.float64, order="C")
    if q.ndim != 2 or q.shape[0] != u.n:
        raise ValueError(f"target must have {u.n} rows")
    if len(u) == 0:
        return q
    order = application_order(u, direction, grouped, group_size)
    if debug_validate:
        u.validate_order(order, direction)
    dots = np.empty(q.shape[1])
    macs = _rank1_seq(q, order, u.row0, u.length, u.tau, u.v, dots)
    if counter is not None:
        counter.add("BC-Back", int(macs))
    return q


# ---------------------------------------------------------------------------
# final multiply


def final_gemm(q_sb_block: np.ndarray, q_d: np.ndarray,
               counter: FlopCounter | None = None) -> np.ndarray:
    """One worker's rows of Q = Q_sb Q_d."""
    if q_sb_block.shape[1] != q_d.shape[0]:
        raise ValueError("inner dimensions disagree")
    return matmul_counted(q_sb_block, q_d, counter, stage="FinalMultiply")
