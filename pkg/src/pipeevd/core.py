"""Dense symmetric containers and counted kernel primitives.

Everything downstream (band reduction, bulge chasing, back-transform,
verification) is built on the small set of types and operations defined
here.  All numerics are FP64.  Work is tracked in multiply-adds (MACs):
a matmul of shapes (m, k) x (k, n) costs m*n*k.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

EPS = float(np.finfo(np.float64).eps)

# Cache tile edge for the blocked symmetric update kernel.
TILE = 64


class ProtocolError(RuntimeError):
    """A worker observed a message or handoff that violates the protocol."""


class FlopCounter:
    """Monotone multiply-add counter with a per-stage breakdown.

    Counts are plain Python ints (they stay well inside 64 bits for the
    problem sizes this package targets).  ``merge`` is atomic so worker
    threads can fold their local counters into a shared one.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.by_stage: dict[str, int] = {}

    @property
    def multiply_adds(self) -> int:
        with self._lock:
            return sum(self.by_stage.values())

    def add(self, stage: str, macs: int) -> None:
        if macs < 0:
            raise ValueError("flop counts only increase")
        with self._lock:
            self.by_stage[stage] = self.by_stage.get(stage, 0) + int(macs)

    def merge(self, other: "FlopCounter") -> None:
        with other._lock:
            snapshot = dict(other.by_stage)
        with self._lock:
            for stage, macs in snapshot.items():
                self.by_stage[stage] = self.by_stage.get(stage, 0) + macs

    def to_csv(self, path) -> None:
        with self._lock:
            rows = sorted(self.by_stage.items())
        with open(path, "w") as f:
            f.write("stage,multiply_adds\n")
            for stage, macs in rows:
                f.write(f"{stage},{macs}\n")


@dataclass
class SymmetricMatrix:
    """Dense symmetric matrix, column-major storage.

    Construction rejects data whose asymmetry exceeds
    ``sym_tol * max(1, ||A||_F)``.
    """

    n: int
    data: np.ndarray
    sym_tol: float = 1e-13

    def __post_init__(self):
        self.data = np.asfortranarray(self.data, dtype=np.float64)
        if self.data.shape != (self.n, self.n):
            raise ValueError(f"expected {self.n}x{self.n}, got {self.data.shape}")
        scale = max(1.0, float(np.linalg.norm(self.data)))
        skew = float(np.max(np.abs(self.data - self.data.T))) if self.n else 0.0
        if skew > self.sym_tol * scale:
            raise ValueError(f"asymmetry {skew:.3e} exceeds tolerance")

    @classmethod
    def from_dense(cls, a: np.ndarray, sym_tol: float = 1e-13) -> "SymmetricMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls(n=a.shape[0], data=a, sym_tol=sym_tol)

    @property
    def norm_f(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass
class ColumnBlock:
    """A worker's contiguous slice of matrix columns, all n rows kept."""

    owner: int
    col_start: int
    col_end: int
    data: np.ndarray  # shape (n, col_end - col_start), Fortran order

    def __post_init__(self):
        self.data = np.asfortranarray(self.data, dtype=np.float64)
        width = self.col_end - self.col_start
        if width <= 0:
            raise ValueError("empty column block")
        if self.data.shape[1] != width:
            raise ValueError("data width does not match column range")

    @property
    def width(self) -> int:
        return self.col_end - self.col_start


class BandMatrix:
    """Symmetric band matrix with half-bandwidth b.

    Stored as ``bands[d, j] = A[j + d, j]`` for diagonals d = 0..b.
    Entries beyond the band must be exactly zero (up to ``tol``) when
    constructing from a dense matrix.
    """

    def __init__(self, n: int, b: int, bands: np.ndarray):
        if not 0 <= b < max(n, 1):
            if not (n == 1 and b == 0):
                raise ValueError(f"bad bandwidth {b} for n={n}")
        bands = np.ascontiguousarray(bands, dtype=np.float64)
        if bands.shape != (b + 1, n):
            raise ValueError(f"bands must be ({b + 1}, {n}), got {bands.shape}")
        self.n = n
        self.b = b
        self.bands = bands

    @classmethod
    def from_dense(cls, a: np.ndarray, b: int, tol: float = 0.0) -> "BandMatrix":
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        if n > b + 1:
            off = np.abs(np.tril(a, -(b + 1)))
            worst = float(off.max()) if off.size else 0.0
            if worst > tol:
                raise ValueError(f"entry of magnitude {worst:.3e} outside band")
        bands = np.zeros((b + 1, n))
        for d in range(b + 1):
            bands[d, : n - d] = np.diagonal(a, -d)
        return cls(n, b, bands)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for d in range(self.b + 1):
            idx = np.arange(self.n - d)
            a[idx + d, idx] = self.bands[d, : self.n - d]
            if d > 0:
                a[idx, idx + d] = self.bands[d, : self.n - d]
        return a

    def to_tridiagonal(self) -> "TridiagonalMatrix":
        if self.b > 1:
            raise ValueError("bandwidth must be <= 1")
        d = self.bands[0].copy()
        e = self.bands[1, : self.n - 1].copy() if self.b == 1 else np.zeros(self.n - 1)
        return TridiagonalMatrix(d=d, e=e)


@dataclass
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix: diagonal d (n) and off-diagonal e (n-1)."""

    d: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.d = np.ascontiguousarray(self.d, dtype=np.float64)
        self.e = np.ascontiguousarray(self.e, dtype=np.float64)
        if self.d.ndim != 1 or self.e.ndim != 1:
            raise ValueError("d and e must be vectors")
        if len(self.e) != max(len(self.d) - 1, 0):
            raise ValueError("off-diagonal length must be n - 1")

    @property
    def n(self) -> int:
        return len(self.d)

    def to_dense(self) -> np.ndarray:
        a = np.diag(self.d)
        if self.n > 1:
            a += np.diag(self.e, 1) + np.diag(self.e, -1)
        return a

    def norm2_upper(self) -> float:
        """Cheap upper bound on ||T||_2 (Gershgorin style)."""
        if self.n == 0:
            return 0.0
        r = np.abs(self.d).astype(float)
        if self.n > 1:
            r[:-1] += np.abs(self.e)
            r[1:] += np.abs(self.e)
        return float(r.max())


@dataclass
class ReflectorPanel:
    """Compact WY block reflector Q = I - W Y^T for one panel.

    Y holds the unit-lower-trapezoidal Householder vectors, W the
    accumulated coefficient columns.  ``col_offset`` is the global index
    of the panel's first column; the m rows of W/Y cover the trailing
    rows of the matrix that produced it, so row ``r`` maps to global row
    ``n - m + r``.  Z, when present, caches the two-sided update term
    A W - Y (W^T A W) / 2.
    """

    W: np.ndarray
    Y: np.ndarray
    col_offset: int
    Z: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asfortranarray(self.W, dtype=np.float64)
        self.Y = np.asfortranarray(self.Y, dtype=np.float64)
        if self.W.shape != self.Y.shape:
            raise ValueError("W and Y shapes differ")
        m, k = self.Y.shape
        if m < k:
            raise ValueError("panel taller than wide required")
        for j in range(k):
            if self.Y[j, j] != 1.0 or np.any(self.Y[:j, j] != 0.0):
                raise ValueError("Y must be unit lower trapezoidal")

    @property
    def width(self) -> int:
        return self.Y.shape[1]


def house_vector(x: np.ndarray):
    """Householder vector for x: returns (v, tau, alpha) with v[0] = 1.

    H = I - tau v v^T sends x to alpha e_1 with
    alpha = -sign(x[0]) ||x||_2 and sign(0) taken as +1.  A zero tail
    leaves x alone: tau = 0, alpha = x[0].
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.zeros(len(x))
    v[0] = 1.0
    tail = float(np.linalg.norm(x[1:]))
    if tail == 0.0:
        return v, 0.0, float(x[0])
    sign = -1.0 if x[0] < 0.0 else 1.0
    alpha = -sign * float(np.hypot(x[0], tail))
    v[1:] = x[1:] / (x[0] - alpha)
    tau = 2.0 / (1.0 + float(np.dot(v[1:], v[1:])))
    return v, tau, alpha


def apply_block_reflector(c, panel: ReflectorPanel, side: str = "left",
                          transpose: bool = False, counter: FlopCounter | None = None,
                          stage: str = "reflector") -> np.ndarray:
    """Apply Q = I - W Y^T (or Q^T) to c in place.

    side='left' computes Q c (transpose: Q^T c); side='right' computes
    c Q (transpose: c Q^T).  Cost is 2 * rows * cols * k MACs.
    """
    w, y = panel.W, panel.Y
    if transpose:
        w, y = y, w  # Q^T = I - Y W^T
    if side == "left":
        c -= w @ (y.T @ c)
        m, ncols = c.shape
    elif side == "right":
        c -= (c @ w) @ y.T
        m, ncols = c.shape
    else:
        raise ValueError(f"side must be left or right, got {side!r}")
    if counter is not None:
        counter.add(stage, 2 * m * ncols * panel.width)
    return c


def sym_rank2k_update(a: np.ndarray, y: np.ndarray, z: np.ndarray,
                      counter: FlopCounter | None = None,
                      stage: str = "rank2k") -> np.ndarray:
    """In-place symmetric rank-2k update  a -= y z^T + z y^T.

    Only the lower triangle is computed (in cache tiles), then mirrored
    bit-exactly onto the upper triangle, so the result is symmetric to
    the last bit and roughly half the multiply-adds of the full update
    are spent.
    """
    m, k = y.shape
    if a.shape != (m, m) or z.shape != (m, k):
        raise ValueError("shape mismatch in rank-2k update")
    macs = 0
    for i0 in range(0, m, TILE):
        i1 = min(i0 + TILE, m)
        for j0 in range(0, i0 + TILE, TILE):
            j1 = min(j0 + TILE, m)
            a[i0:i1, j0:j1] -= y[i0:i1] @ z[j0:j1].T + z[i0:i1] @ y[j0:j1].T
            macs += 2 * (i1 - i0) * (j1 - j0) * k
    iu = np.triu_indices(m, 1)
    a[iu] = a.T[iu]
    if counter is not None:
        counter.add(stage, macs)
    return a


def matmul_counted(a: np.ndarray, b: np.ndarray,
                   counter: FlopCounter | None = None,
                   stage: str = "gemm") -> np.ndarray:
    """a @ b with the m*n*k multiply-adds charged to ``stage``."""
    out = a @ b
    if counter is not None:
        m = a.shape[0]
        kk = a.shape[1] if a.ndim > 1 else 1
        ncols = b.shape[1] if b.ndim > 1 else 1
        counter.add(stage, m * ncols * kk)
    return out
