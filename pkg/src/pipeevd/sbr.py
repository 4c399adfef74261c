"""Successive band reduction: dense symmetric -> band of semi-bandwidth b.

Round x factors the panel of columns [x*b, x*b + pw) over rows
[x*b + b, n) with a blocked Householder QR, then applies the two-sided
update A2 <- A2 - Y Z^T - Z Y^T with Z = A W - Y (W^T A W)/2 to the
trailing square.  Columns left of a finished panel are never touched
again, which is what the pipelined runtime relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (BandMatrix, FlopCounter, ReflectorPanel, SymmetricMatrix,
                   house_vector, sym_rank2k_update)


@dataclass
class SbrConfig:
    b: int = 32
    panel_width: int | None = None
    inner_block: int = 8

    def __post_init__(self):
        if self.panel_width is None:
            self.panel_width = self.b
        if self.panel_width != self.b:
            raise ValueError("panel_width must equal the bandwidth")
        if self.b < 1:
            raise ValueError("bandwidth must be >= 1")
        if self.inner_block < 1:
            raise ValueError("inner_block must be >= 1")


@dataclass
class SbrFactors:
    """All panel reflectors of one reduction, ordered by column offset."""

    n: int
    b: int
    panels: list = field(default_factory=list)

    def __post_init__(self):
        offs = [p.col_offset for p in self.panels]
        if offs != sorted(offs) or len(set(offs)) != len(offs):
            raise ValueError("panels must be ordered by ascending col_offset")
        total = sum(p.width for p in self.panels)
        if self.panels and total != self.n - self.b:
            raise ValueError(f"panel widths sum to {total}, expected {self.n - self.b}")


def round_schedule(n: int, b: int):
    """(col_start, panel_width, trailing_start) per reduction round.

    Panel widths sum to n - b; with b | n every round is full width and
    the trailing sizes are n - b, n - 2b, ..., b.
    """
    out = []
    c0 = 0
    while c0 < n - b:
        pw = min(b, n - b - c0)
        out.append((c0, pw, c0 + b))
        c0 += b
    return out


def panel_qr(panel: np.ndarray, col_offset: int = 0, inner_block: int = 8,
             counter: FlopCounter | None = None, stage: str = "SBR") -> ReflectorPanel:
    """Blocked Householder QR of a panel; overwrites it with R.

    Returns the compound reflector Q = I - W Y^T with Q^T panel = R.
    The factorization is double-blocked: columns are processed in inner
    blocks of ``inner_block``, and each finished inner block is applied
    to the remaining columns as one block reflector.
    """
    m, k = panel.shape
    if m < k:
        raise ValueError("panel must be at least as tall as wide")
    w_all = np.zeros((m, k), order="F")
    y_all = np.zeros((m, k), order="F")
    macs = 0
    for j0 in range(0, k, inner_block):
        j1 = min(j0 + inner_block, k)
        # local compound for this inner block, used for the trailing apply
        w_blk = np.zeros((m, j1 - j0), order="F")
        for j in range(j0, j1):
            v, tau, alpha = house_vector(panel[j:, j])
            y_all[j:, j] = v
            panel[j, j] = alpha
            panel[j + 1:, j] = 0.0
            # rank-1 update of the rest of the inner block
            rest = panel[j:, j + 1:j1]
            if tau != 0.0 and rest.shape[1]:
                rest -= np.outer(tau * v, v @ rest)
                macs += 2 * (m - j) * rest.shape[1]
            # extend the global W:  w_j = tau (v - W_prev (Y_prev^T v))
            vfull = y_all[:, j]
            if j > 0:
                w_all[:, j] = tau * (vfull - w_all[:, :j] @ (y_all[:, :j].T @ vfull))
                macs += 2 * m * j
            else:
                w_all[:, j] = tau * vfull
            w_blk[:, j - j0] = tau * (vfull - w_blk[:, :j - j0] @ (y_all[:, j0:j].T @ vfull)) \
                if j > j0 else tau * vfull
            if j > j0:
                macs += 2 * m * (j - j0)
        # block-apply Q^T of this inner block to the columns right of it
        rest = panel[:, j1:]
        if rest.shape[1]:
            rest -= y_all[:, j0:j1] @ (w_blk.T @ rest)
            macs += 2 * m * (j1 - j0) * rest.shape[1]
    if counter is not None:
        counter.add(stage, macs)
    return ReflectorPanel(W=w_all, Y=y_all, col_offset=col_offset)


def form_z(a_trailing: np.ndarray, w: np.ndarray, y: np.ndarray,
           counter: FlopCounter | None = None, stage: str = "SBR") -> np.ndarray:
    """Z = A W - Y (W^T A W) / 2, computing A W once."""
    m, k = w.shape
    if a_trailing.shape != (m, m) or y.shape != (m, k):
        raise ValueError("shape mismatch in form_z")
    aw = a_trailing @ w
    mm = w.T @ aw
    z = aw - 0.5 * (y @ mm)
    if counter is not None:
        counter.add(stage, m * m * k + k * k * m + m * k * k)
    return z


def trailing_update(a2: np.ndarray, y: np.ndarray, z: np.ndarray, mode: str = "symmetric",
                    counter: FlopCounter | None = None, stage: str = "SBR") -> None:
    """A2 <- A2 - Y Z^T - Z Y^T.

    mode='full' runs two plain multiplies over the whole square (the
    full-storage tradeoff: twice the multiply-adds, no triangle
    bookkeeping); mode='symmetric' computes one triangle and mirrors.
    """
    m, k = y.shape
    if a2.shape != (m, m) or z.shape != (m, k):
        raise ValueError("shape mismatch in trailing update")
    if mode == "full":
        a2 -= y @ z.T
        a2 -= z @ y.T
        if counter is not None:
            counter.add(stage, 2 * m * m * k)
    elif mode == "symmetric":
        sym_rank2k_update(a2, y, z, counter, stage)
    else:
        raise ValueError(f"mode must be full or symmetric, got {mode!r}")


def sbr_reduce(a: SymmetricMatrix, cfg: SbrConfig,
               counter: FlopCounter | None = None):
    """Reduce A to band form: returns (BandMatrix, SbrFactors).

    The band satisfies B = Qs^T A Qs with Qs the product of the panel
    reflectors; off-band magnitude is checked against 1e-13 ||A||_F
    before the band storage drops it.
    """
    n = a.n
    b = cfg.b
    if n <= b:
        raise ValueError(f"need n > b, got n={n}, b={b}")
    work = np.array(a.data, order="F")
    factors = []
    for c0, pw, t0 in round_schedule(n, b):
        panel = work[t0:, c0:c0 + pw]
        pan = panel_qr(panel, col_offset=c0, inner_block=cfg.inner_block,
                       counter=counter)
        work[c0:c0 + pw, t0:] = panel.T
        if pw < b:
            # the in-band columns between panel end and trailing start
            # still need the left half of the similarity transform
            coupling = work[t0:, c0 + pw:t0]
            if coupling.shape[1]:
                coupling -= pan.Y @ (pan.W.T @ coupling)
                if counter is not None:
                    counter.add("SBR", 2 * coupling.shape[0] * coupling.shape[1] * pw)
                work[c0 + pw:t0, t0:] = coupling.T
        trailing = work[t0:, t0:]
        z = form_z(trailing, pan.W, pan.Y, counter)
        trailing_update(trailing, pan.Y, z, "symmetric", counter)
        factors.append(pan)
    band = BandMatrix.from_dense(work, b, tol=1e-13 * a.norm_f)
    return band, SbrFactors(n=n, b=b, panels=factors)
