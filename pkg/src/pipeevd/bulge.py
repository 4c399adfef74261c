"""Bulge chasing: band matrix -> symmetric tridiagonal.

Sweep i eliminates everything below the subdiagonal in column i, then
chases the resulting fill down the band: step j works on the row window
[i+1+j*b, i+1+(j+1)*b), eliminating the fill of column i+1+(j-1)*b,
left-transforming the partially bulged columns in between, applying the
two-sided update to the window square, and coupling the next window's
rows from the right.  Every Householder vector is recorded with its
(sweep, step) index for the back transformation.

The partitioned variant chases all sweeps whose pivot lies in the local
column range over the whole remaining band, then hands its successor
the 2b x b block sitting exactly at the partition boundary.  That block
is the only worker-to-worker message of the stage; the modified band
tail travels separately (it is staged through the host by the caller).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import BandMatrix, FlopCounter, ProtocolError, TridiagonalMatrix


def _pad8(k: int) -> int:
    return ((k + 7) // 8) * 8


class BulgeReflectorSet:
    """All bulge-chasing reflectors of one reduction.

    Flat contiguous storage in creation order (sweep i ascending, step j
    ascending within a sweep); vectors padded to a stride that is a
    multiple of 8 doubles.  ``by_step`` groups positions by chase step j
    (sorted by sweep), the layout the grouped back transformation walks.
    """

    def __init__(self, n: int, b: int, i_idx, j_idx, row0, length, tau, v):
        self.n = n
        self.b = b
        self.i_idx = np.ascontiguousarray(i_idx, dtype=np.int64)
        self.j_idx = np.ascontiguousarray(j_idx, dtype=np.int64)
        self.row0 = np.ascontiguousarray(row0, dtype=np.int64)
        self.length = np.ascontiguousarray(length, dtype=np.int64)
        self.tau = np.ascontiguousarray(tau, dtype=np.float64)
        self.v = np.ascontiguousarray(v, dtype=np.float64)
        if len(self.tau):
            # canonical layout: chase step j outer, sweep i inner, the
            # order the grouped back transformation streams through
            perm = np.lexsort((self.i_idx, self.j_idx))
            self.i_idx = np.ascontiguousarray(self.i_idx[perm])
            self.j_idx = np.ascontiguousarray(self.j_idx[perm])
            self.row0 = np.ascontiguousarray(self.row0[perm])
            self.length = np.ascontiguousarray(self.length[perm])
            self.tau = np.ascontiguousarray(self.tau[perm])
            self.v = np.ascontiguousarray(self.v[perm])
        if self.v.shape != (len(self.tau), _pad8(b)):
            raise ValueError("reflector storage has the wrong stride")
        for t in self.tau:
            if not math.isfinite(t):
                raise ValueError("non-finite tau")
        if np.any(self.v[np.arange(len(self.tau)), 0] != 1.0) and len(self.tau):
            raise ValueError("reflector vectors must have v[0] = 1")
        self._pos = {(int(i), int(j)): p
                     for p, (i, j) in enumerate(zip(self.i_idx, self.j_idx))}
        if len(self._pos) != len(self.tau):
            raise ValueError("duplicate (sweep, step) index")

    def __len__(self) -> int:
        return len(self.tau)

    @property
    def stride(self) -> int:
        return self.v.shape[1] if len(self.tau) else _pad8(self.b)

    def position(self, i: int, j: int):
        return self._pos.get((i, j))

    def by_step(self) -> dict:
        out: dict[int, list] = {}
        for p in range(len(self.tau)):
            out.setdefault(int(self.j_idx[p]), []).append(p)
        return out

    def group_labels(self, group_size: int = 4):
        """(G_k, B_j) labels per reflector: sweep-group and step-block."""
        return self.i_idx // group_size, self.j_idx.copy()

    def back_deps(self, i: int, j: int):
        """Reflectors that must be applied before u_(i,j) when the
        product Q_b is applied (conventional direction)."""
        return [(i + 1, j - 1), (i + 1, j)] if j >= 1 else [(i + 1, j)]

    def validate_order(self, order, direction: str = "reordered") -> None:
        """Check an application order against the dependency rule.

        'conventional' applies Q_b itself: u_(i,j) after u_(i+1,j-1) and
        u_(i+1,j).  'reordered' applies Q_b^T, which reverses the rule:
        u_(i,j) after u_(i-1,j) and u_(i-1,j+1).
        """
        when = np.empty(len(self.tau), dtype=np.int64)
        when[np.asarray(order, dtype=np.int64)] = np.arange(len(order))
        for p in range(len(self.tau)):
            i, j = int(self.i_idx[p]), int(self.j_idx[p])
            if direction == "conventional":
                needed = [(i + 1, j - 1), (i + 1, j)]
            elif direction == "reordered":
                needed = [(i - 1, j), (i - 1, j + 1)]
            else:
                raise ValueError(direction)
            for i2, j2 in needed:
                q = self._pos.get((i2, j2))
                if q is not None and when[q] >= when[p]:
                    raise ValueError(
                        f"order violates dependency: u_({i},{j}) before u_({i2},{j2})")

    @classmethod
    def empty(cls, n: int, b: int) -> "BulgeReflectorSet":
        z = np.zeros(0)
        return cls(n, b, z, z, z, z, z, np.zeros((0, _pad8(b))))

    @classmethod
    def merge(cls, parts) -> "BulgeReflectorSet":
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to merge")
        n, b = parts[0].n, parts[0].b
        for p in parts:
            if (p.n, p.b) != (n, b):
                raise ValueError("mismatched reflector sets")
        return cls(n, b,
                   np.concatenate([p.i_idx for p in parts]),
                   np.concatenate([p.j_idx for p in parts]),
                   np.concatenate([p.row0 for p in parts]),
                   np.concatenate([p.length for p in parts]),
                   np.concatenate([p.tau for p in parts]),
                   np.vstack([p.v for p in parts]))


@dataclass
class OverlapBlock:
    """The 2b x b boundary region handed from one worker's chase to the next.

    ``offset`` is the partition boundary column: values cover global rows
    [offset, offset+2b) x columns [offset-b, offset), zero-padded where
    those indices leave the matrix.  After the sender finished its
    sweeps this region is structurally empty except the single
    subdiagonal bridge entry at (offset, offset-1); the receiver
    validates exactly that.
    """

    values: np.ndarray
    offset: int
    b: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (2 * self.b, self.b):
            raise ValueError(f"overlap must be {2 * self.b} x {self.b}")

    @property
    def words(self) -> int:
        return 2 * self.b * self.b


@njit(cache=True, nogil=True)
def _chase(s, col0, n, b, i0, i1, i_arr, j_arr, row0_arr, len_arr, tau_arr,
           v_arr, ubuf, wbuf):  # pragma: no cover
    cnt = 0
    macs = 0
    hi = min(i1, n - 2)
    for gi in range(i0, hi):
        j = 0
        while gi + 1 + j * b <= n - 2:
            if j == 0:
                cg = gi
            else:
                cg = gi + 1 + (j - 1) * b
            w0 = gi + 1 + j * b
            L = min(b, n - w0)
            wl = w0 - col0
            cl = cg - col0
            tail = 0.0
            for r in range(1, L):
                tail += s[wl + r, cl] * s[wl + r, cl]
            if tail != 0.0:
                x0 = s[wl, cl]
                nrm = math.sqrt(x0 * x0 + tail)
                alpha = -nrm if x0 >= 0.0 else nrm
                denom = x0 - alpha
                v = v_arr[cnt]
                v[0] = 1.0
                vsq = 1.0
                for r in range(1, L):
                    v[r] = s[wl + r, cl] / denom
                    vsq += v[r] * v[r]
                tau = 2.0 / vsq
                i_arr[cnt] = gi
                j_arr[cnt] = j
                row0_arr[cnt] = w0
                len_arr[cnt] = L
                tau_arr[cnt] = tau
                # eliminate the column (and its mirror row)
                s[wl, cl] = alpha
                s[cl, wl] = alpha
                for r in range(1, L):
                    s[wl + r, cl] = 0.0
                    s[cl, wl + r] = 0.0
                # left-transform the partially bulged columns between
                for col in range(cl + 1, wl):
                    dot = 0.0
                    for r in range(L):
                        dot += v[r] * s[wl + r, col]
                    dot *= tau
                    for r in range(L):
                        s[wl + r, col] -= dot * v[r]
                        s[col, wl + r] = s[wl + r, col]
                    macs += 2 * L
                # two-sided update of the window square
                for r in range(L):
                    acc = 0.0
                    for ccc in range(L):
                        acc += s[wl + r, wl + ccc] * v[ccc]
                    ubuf[r] = tau * acc
                gam = 0.0
                for r in range(L):
                    gam += v[r] * ubuf[r]
                gam *= 0.5 * tau
                for r in range(L):
                    wbuf[r] = ubuf[r] - gam * v[r]
                for r in range(L):
                    for ccc in range(L):
                        s[wl + r, wl + ccc] -= v[r] * wbuf[ccc] + wbuf[r] * v[ccc]
                macs += 3 * L * L + 3 * L
                # right coupling of the rows below the window
                t_end = min(w0 + L + b, n) - col0
                for t in range(wl + L, t_end):
                    dot = 0.0
                    for r in range(L):
                        dot += s[t, wl + r] * v[r]
                    dot *= tau
                    for r in range(L):
                        s[t, wl + r] -= dot * v[r]
                        s[wl + r, t] = s[t, wl + r]
                    macs += 2 * L
                cnt += 1
            j += 1
    return cnt, macs


def _step_capacity(n: int, b: int, i0: int, i1: int) -> int:
    cap = 0
    for i in range(i0, min(i1, n - 2)):
        cap += (n - 3 - i) // b + 1
    return cap


def _chase_range(s: np.ndarray, col0: int, n: int, b: int, i0: int, i1: int,
                 counter: FlopCounter | None):
    cap = _step_capacity(n, b, i0, i1)
    stride = _pad8(b)
    i_arr = np.zeros(cap, dtype=np.int64)
    j_arr = np.zeros(cap, dtype=np.int64)
    row0_arr = np.zeros(cap, dtype=np.int64)
    len_arr = np.zeros(cap, dtype=np.int64)
    tau_arr = np.zeros(cap, dtype=np.float64)
    v_arr = np.zeros((max(cap, 1), stride), dtype=np.float64)
    ubuf = np.zeros(b, dtype=np.float64)
    wbuf = np.zeros(b, dtype=np.float64)
    cnt, macs = _chase(s, col0, n, b, i0, i1, i_arr, j_arr, row0_arr,
                       len_arr, tau_arr, v_arr, ubuf, wbuf)
    if counter is not None:
        counter.add("BC", int(macs))
    return BulgeReflectorSet(n, b, i_arr[:cnt], j_arr[:cnt], row0_arr[:cnt],
                             len_arr[:cnt], tau_arr[:cnt], v_arr[:cnt])


def _check_finished_zero(s: np.ndarray, hi: int, b: int) -> None:
    """Finished columns must be exactly tridiagonal.

    Eliminations write literal zeros and no later window revisits a
    finished column, so anything nonzero here is a logic error, not
    roundoff.  Fill never travels more than 2b-1 rows below the
    diagonal, so checking those diagonals covers every entry a buggy
    chase could have touched.
    """
    m = s.shape[0]
    for k in range(2, min(2 * b + 1, m - 1) + 1):
        seg = np.diag(s, -k)
        stop = min(hi, m - k)
        if stop > 0 and np.any(seg[:stop] != 0.0):
            raise RuntimeError("bulge chase left fill in a finished column")


def bc_reduce(band: BandMatrix, counter: FlopCounter | None = None):
    """Full band -> tridiagonal reduction on one worker."""
    n, b = band.n, band.b
    if b <= 1:
        return band.to_tridiagonal(), BulgeReflectorSet.empty(n, max(b, 1))
    s = band.to_dense()
    refl = _chase_range(s, 0, n, b, 0, n, counter)
    _check_finished_zero(s, n, b)
    d = np.ascontiguousarray(np.diag(s))
    e = np.ascontiguousarray(np.diag(s, -1))
    return TridiagonalMatrix(d=d, e=e), refl


@dataclass
class BcPartitionResult:
    d_part: np.ndarray
    e_part: np.ndarray
    reflectors: BulgeReflectorSet
    outgoing: OverlapBlock | None
    tail: BandMatrix | None  # modified band beyond pivot_end, None if last


def _extract_overlap(s: np.ndarray, col0: int, n: int, b: int,
                     boundary: int) -> OverlapBlock:
    vals = np.zeros((2 * b, b))
    for r in range(2 * b):
        gr = boundary + r
        if gr >= n:
            break
        for c in range(b):
            gc = boundary - b + c
            if 0 <= gc:
                vals[r, c] = s[gr - col0, gc - col0] if gc >= col0 else 0.0
    return OverlapBlock(values=vals, offset=boundary, b=b)


def _validate_incoming(incoming: OverlapBlock, col0: int, b: int) -> None:
    if incoming.offset != col0:
        raise ProtocolError(
            f"overlap offset {incoming.offset} does not match boundary {col0}")
    if incoming.b != b:
        raise ProtocolError("overlap bandwidth mismatch")
    vals = incoming.values
    mask = np.ones_like(vals, dtype=bool)
    mask[0, b - 1] = False  # the subdiagonal bridge entry may be nonzero
    if np.any(vals[mask] != 0.0):
        raise ProtocolError("overlap block contains fill outside the bridge entry")


def bc_reduce_partition(band_tail: BandMatrix, b: int, col0: int, pivot_end: int,
                        incoming: OverlapBlock | None, is_last: bool,
                        counter: FlopCounter | None = None) -> BcPartitionResult:
    """Chase all sweeps with pivot in [col0, pivot_end) down the band tail.

    ``band_tail`` covers global columns [col0, n); its semi-bandwidth may
    be up to 2b to carry residual fill left by the predecessor's sweeps.
    Returns the finished tridiagonal rows [col0, pivot_end), the recorded
    reflectors (global sweep indices), the boundary OverlapBlock for the
    successor (None when is_last), and the modified band tail from
    pivot_end on (None when is_last).
    """
    m = band_tail.n
    n = col0 + m
    if col0 > 0:
        if incoming is None:
            raise ProtocolError("interior worker started bulge chasing without "
                                "its predecessor's overlap block")
        _validate_incoming(incoming, col0, b)
    elif incoming is not None:
        raise ProtocolError("first worker must not receive an overlap block")
    if b <= 1:
        refl = BulgeReflectorSet.empty(n, max(b, 1))
        s = band_tail.to_dense()
    else:
        s = band_tail.to_dense()
        refl = _chase_range(s, col0, n, b, col0, pivot_end, counter)
        _check_finished_zero(s, min(pivot_end, n) - col0, b)
    lo, hi = 0, min(pivot_end, n) - col0
    d_part = np.ascontiguousarray(np.diag(s)[lo:hi])
    e_part = np.ascontiguousarray(np.diag(s, -1)[lo:min(hi, m - 1)])
    if is_last:
        return BcPartitionResult(d_part, e_part, refl, None, None)
    outgoing = _extract_overlap(s, col0, n, b, pivot_end)
    rest = s[pivot_end - col0:, pivot_end - col0:]
    bw = min(2 * b, rest.shape[0] - 1) if rest.shape[0] > 1 else 0
    tail = BandMatrix.from_dense(rest, bw, tol=0.0)
    return BcPartitionResult(d_part, e_part, refl, outgoing, tail)
