"""Symmetric tridiagonal eigensolver (implicit-shift QL/QR, Wilkinson shift).

This is the host-side stage of the pipeline.  It is deliberately plain
sequential implicit-shift iteration with deflation: the solver is an
interchangeable dependency of the pipeline, not the interesting part,
and it keeps the memory contract simple (no workspace beyond the
optional eigenvector matrix).  Each unreduced block is iterated from
whichever end carries the smaller diagonal entries; on graded matrices
(the band reduction tends to produce them) that choice, together with a
relative split criterion, is what keeps the accumulated rotations
orthogonal to a few ulps instead of drifting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import EPS, FlopCounter, TridiagonalMatrix

MAX_ITER_PER_N = 30


@dataclass
class EigenResult:
    """Eigenvalues (ascending) and optionally the eigenvector matrix."""

    lam: np.ndarray
    Q: np.ndarray | None = None
    vectors_computed: bool = False

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.vectors_computed != (self.Q is not None):
            raise ValueError("vectors_computed flag disagrees with Q")

    @property
    def n(self) -> int:
        return self.lam.size


_SAFMIN = float(np.finfo(np.float64).tiny)


@njit(cache=True, nogil=True)
def _lartg(f, g):  # pragma: no cover
    """Plane rotation (c, s, r) with c*f + s*g = r and c*g - s*f = 0."""
    if g == 0.0:
        return 1.0, 0.0, f
    if f == 0.0:
        return 0.0, 1.0, g
    r = np.sqrt(f * f + g * g)
    if r == 0.0:
        # both inputs deep in the denormals; rescale once and retry
        scl = 1.0 / _SAFMIN
        fs = f * scl
        gs = g * scl
        r = np.sqrt(fs * fs + gs * gs) * _SAFMIN
    c = f / r
    s = g / r
    if abs(f) > abs(g) and c < 0.0:
        c = -c
        s = -s
        r = -r
    return c, s, r


@njit(cache=True, nogil=True)
def _laev2(a, b, c):  # pragma: no cover
    """Closed-form eigendecomposition of [[a, b], [b, c]].

    Returns (rt1, rt2, cs1, sn1): rt1 is the eigenvalue of larger
    magnitude, (cs1, sn1) its unit eigenvector.  rt2 is computed from
    rt1 as a product rather than a difference so the smaller eigenvalue
    keeps full relative accuracy.
    """
    sm = a + c
    df = a - c
    adf = abs(df)
    tb = b + b
    ab = abs(tb)
    if abs(a) > abs(c):
        acmx = a
        acmn = c
    else:
        acmx = c
        acmn = a
    if adf > ab:
        rt = adf * np.sqrt(1.0 + (ab / adf) ** 2)
    elif adf < ab:
        rt = ab * np.sqrt(1.0 + (adf / ab) ** 2)
    else:
        rt = ab * np.sqrt(2.0)
    if sm < 0.0:
        rt1 = 0.5 * (sm - rt)
        sgn1 = -1.0
        rt2 = (acmx / rt1) * acmn - (b / rt1) * b
    elif sm > 0.0:
        rt1 = 0.5 * (sm + rt)
        sgn1 = 1.0
        rt2 = (acmx / rt1) * acmn - (b / rt1) * b
    else:
        rt1 = 0.5 * rt
        rt2 = -0.5 * rt
        sgn1 = 1.0
    if df >= 0.0:
        cs = df + rt
        sgn2 = 1.0
    else:
        cs = df - rt
        sgn2 = -1.0
    acs = abs(cs)
    if acs > ab:
        ct = -tb / cs
        sn1 = 1.0 / np.sqrt(1.0 + ct * ct)
        cs1 = ct * sn1
    elif ab == 0.0:
        cs1 = 1.0
        sn1 = 0.0
    else:
        tn = -cs / tb
        cs1 = 1.0 / np.sqrt(1.0 + tn * tn)
        sn1 = tn * cs1
    if sgn1 == sgn2:
        tn = cs1
        cs1 = -sn1
        sn1 = tn
    return rt1, rt2, cs1, sn1


@njit(cache=True, nogil=True)
def _steqr(d, e, zt, cap):  # pragma: no cover
    """Implicit-shift QL/QR sweeps in place; zt rotated alongside if nonempty.

    d and e are overwritten (e has length n with e[n-1] = 0).  zt holds
    eigenvector candidates as rows (row i accumulates the vector for
    d[i]); each plane rotation then streams two contiguous rows, which
    vectorizes, instead of striding down two columns.  Blocks are split
    where an off-diagonal is negligible against the geometric mean of
    its diagonal neighbours, each block is chased from its small end,
    and 2x2 blocks are solved in closed form.  Returns (failed_index,
    total_iterations, rotations); failed_index is -1 on success.
    """
    n = d.size
    nrow = zt.shape[1]
    ulp = 0.5 * EPS
    eps2 = ulp * ulp
    total = 0
    rots = 0
    l1 = 0
    while l1 < n:
        if l1 > 0:
            e[l1 - 1] = 0.0
        m = n - 1
        for mm in range(l1, n - 1):
            tst = abs(e[mm])
            if tst == 0.0:
                m = mm
                break
            if tst <= (np.sqrt(abs(d[mm])) * np.sqrt(abs(d[mm + 1]))) * ulp:
                e[mm] = 0.0
                m = mm
                break
        l = l1
        lend = m
        l1 = m + 1
        if lend == l:
            continue
        if abs(d[lend]) < abs(d[l]):
            tmp = l
            l = lend
            lend = tmp
        if lend > l:
            # QL sweeps: eigenvalues peel off at the top of the block
            while True:
                m = lend
                for mm in range(l, lend):
                    tst = e[mm] * e[mm]
                    if tst <= (eps2 * abs(d[mm])) * abs(d[mm + 1]) + _SAFMIN:
                        m = mm
                        break
                if m < lend:
                    e[m] = 0.0
                p = d[l]
                if m == l:
                    l += 1
                    if l <= lend:
                        continue
                    break
                if m == l + 1:
                    rt1, rt2, cc, ss = _laev2(d[l], e[l], d[l + 1])
                    rots += 1
                    for k in range(nrow):
                        za = zt[l, k]
                        zb = zt[l + 1, k]
                        zt[l, k] = cc * za + ss * zb
                        zt[l + 1, k] = cc * zb - ss * za
                    d[l] = rt1
                    d[l + 1] = rt2
                    e[l] = 0.0
                    l += 2
                    if l <= lend:
                        continue
                    break
                if total == cap:
                    return l, total, rots
                total += 1
                g = (d[l + 1] - p) / (2.0 * e[l])
                r = np.hypot(g, 1.0)
                g = d[m] - p + e[l] / (g + (r if g >= 0.0 else -r))
                s = 1.0
                c = 1.0
                p = 0.0
                for i in range(m - 1, l - 1, -1):
                    f = s * e[i]
                    b = c * e[i]
                    c, s, r = _lartg(g, f)
                    if i != m - 1:
                        e[i + 1] = r
                    g = d[i + 1] - p
                    r = (d[i] - g) * s + 2.0 * c * b
                    p = s * r
                    d[i + 1] = g + p
                    g = c * r - b
                    rots += 1
                    for k in range(nrow):
                        za = zt[i, k]
                        zb = zt[i + 1, k]
                        zt[i, k] = c * za - s * zb
                        zt[i + 1, k] = s * za + c * zb
                d[l] = d[l] - p
                e[l] = g
        else:
            # QR sweeps: the mirror image, peeling off at the bottom
            while True:
                m = lend
                for mm in range(l, lend, -1):
                    tst = e[mm - 1] * e[mm - 1]
                    if tst <= (eps2 * abs(d[mm])) * abs(d[mm - 1]) + _SAFMIN:
                        m = mm
                        break
                if m > lend:
                    e[m - 1] = 0.0
                p = d[l]
                if m == l:
                    l -= 1
                    if l >= lend:
                        continue
                    break
                if m == l - 1:
                    rt1, rt2, cc, ss = _laev2(d[l - 1], e[l - 1], d[l])
                    rots += 1
                    for k in range(nrow):
                        za = zt[l - 1, k]
                        zb = zt[l, k]
                        zt[l - 1, k] = cc * za + ss * zb
                        zt[l, k] = cc * zb - ss * za
                    d[l - 1] = rt1
                    d[l] = rt2
                    e[l - 1] = 0.0
                    l -= 2
                    if l >= lend:
                        continue
                    break
                if total == cap:
                    return l, total, rots
                total += 1
                g = (d[l - 1] - p) / (2.0 * e[l - 1])
                r = np.hypot(g, 1.0)
                g = d[m] - p + e[l - 1] / (g + (r if g >= 0.0 else -r))
                s = 1.0
                c = 1.0
                p = 0.0
                for i in range(m, l):
                    f = s * e[i]
                    b = c * e[i]
                    c, s, r = _lartg(g, f)
                    if i != m:
                        e[i - 1] = r
                    g = d[i] - p
                    r = (d[i + 1] - g) * s + 2.0 * c * b
                    p = s * r
                    d[i] = g + p
                    g = c * r - b
                    rots += 1
                    for k in range(nrow):
                        za = zt[i, k]
                        zb = zt[i + 1, k]
                        zt[i, k] = c * za + s * zb
                        zt[i + 1, k] = c * zb - s * za
                d[l] = d[l] - p
                e[l - 1] = g
    return -1, total, rots


def tridiag_eig(t: TridiagonalMatrix, want_vectors: bool = False,
                counter: FlopCounter | None = None) -> EigenResult:
    """Eigendecomposition of a symmetric tridiagonal matrix.

    With want_vectors=False nothing n x n is ever allocated.  Raises
    RuntimeError when the iteration has not converged after 30n shifts,
    reporting how far it got.
    """
    n = t.n
    d = np.array(t.d, dtype=np.float64)
    e = np.zeros(n, dtype=np.float64)
    e[:n - 1] = t.e
    if want_vectors:
        zt = np.eye(n)
    else:
        zt = np.zeros((0, 0))
    failed, total, rots = _steqr(d, e, zt, MAX_ITER_PER_N * n)
    if counter is not None:
        counter.add("Solver", rots * (6 + (3 * n if want_vectors else 0)))
    if failed >= 0:
        raise RuntimeError(
            f"tridiagonal QL/QR did not converge: stuck near eigenvalue "
            f"index {failed} of {n} after {total} implicit shifts")
    perm = np.argsort(d, kind="stable")
    lam = np.ascontiguousarray(d[perm])
    if not want_vectors:
        return EigenResult(lam=lam)
    q = np.asfortranarray(zt[perm].T)
    # fix signs so equal inputs give bitwise-equal eigenvectors: the
    # largest-magnitude component of each column is made positive,
    # ties resolved to the earlier index by argmax
    for jcol in range(n):
        col = q[:, jcol]
        piv = int(np.argmax(np.abs(col)))
        if col[piv] < 0.0:
            np.negative(col, out=col)
    return EigenResult(lam=lam, Q=np.asfortranarray(q), vectors_computed=True)
