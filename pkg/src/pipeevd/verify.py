"""Accuracy metrics and an independent brute-force eigen-oracle.

The oracle here is cyclic Jacobi on the dense matrix.  It shares no
code with the band reduction, bulge chasing, or tridiagonal solver
modules, so agreement between those and the oracle is meaningful
evidence rather than a tautology.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import EPS, SymmetricMatrix

JACOBI_MAX_N = 256
JACOBI_MAX_SWEEPS = 100


def backward_error(a: np.ndarray, q: np.ndarray, lam: np.ndarray) -> float:
    """||A - Q diag(lam) Q^T||_F / (n ||A||_F)."""
    a = np.asarray(a, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    n = a.shape[0]
    resid = float(np.linalg.norm(a - (q * lam) @ q.T))
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return 0.0 if resid == 0.0 else math.inf
    return resid / (n * scale)


def orthogonality(q: np.ndarray) -> float:
    """||I - Q Q^T||_F / n."""
    q = np.asarray(q, dtype=np.float64)
    n = q.shape[0]
    return float(np.linalg.norm(np.eye(n) - q @ q.T)) / n


@dataclass
class AccuracyReport:
    backward: float
    ortho: float
    eps: float
    bound_ok: bool
    slack: float = 16.0

    @classmethod
    def from_decomposition(cls, a, q, lam, slack: float = 16.0) -> "AccuracyReport":
        back = backward_error(a, q, lam)
        orth = orthogonality(q)
        return cls(backward=back, ortho=orth, eps=EPS,
                   bound_ok=orth <= 2.0 * EPS * slack, slack=slack)

    def to_dict(self) -> dict:
        return {"backward": self.backward, "ortho": self.ortho,
                "eps": self.eps, "bound_ok": self.bound_ok, "slack": self.slack}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_gemm_bounds(q1: np.ndarray, q2: np.ndarray, slack: float = 16.0) -> bool:
    """True iff q1, q2, and their product are all orthogonal within 2*eps*slack.

    The product check is the interesting one: multiplying two orthogonal
    factors keeps ||I - PP^T||_F/n within the same bound (up to slack).
    The 2-norm in the underlying bound is over-approximated by the
    Frobenius norm, so everything here is exact arithmetic.
    """
    bound = 2.0 * EPS * slack
    if orthogonality(q1) > bound or orthogonality(q2) > bound:
        return False
    return orthogonality(q1 @ q2) <= bound


@njit(cache=True, nogil=True)
def _jacobi_sweeps(a, v, tol, max_sweeps, with_vectors):  # pragma: no cover
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if math.sqrt(2.0 * off) <= tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                    a[p, k] = a[k, p]
                    a[q, k] = a[k, q]
                if with_vectors:
                    for k in range(n):
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = c * vkp - s * vkq
                        v[k, q] = s * vkp + c * vkq
    # final convergence check after the last sweep
    off = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            off += a[i, j] * a[i, j]
    if math.sqrt(2.0 * off) <= tol:
        return max_sweeps
    return -1


def _jacobi_run(a: np.ndarray, with_vectors: bool):
    a = np.array(np.asarray(a, dtype=np.float64), order="C")
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    if n > JACOBI_MAX_N:
        raise ValueError(f"oracle limited to n <= {JACOBI_MAX_N}, got {n}")
    tol = 1e-15 * float(np.linalg.norm(a))
    v = np.eye(n) if with_vectors else np.zeros((1, 1))
    sweeps = _jacobi_sweeps(a, v, tol, JACOBI_MAX_SWEEPS, with_vectors)
    if sweeps < 0:
        raise RuntimeError(
            f"Jacobi oracle failed to converge in {JACOBI_MAX_SWEEPS} sweeps (n={n})")
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    if with_vectors:
        return lam[order], v[:, order]
    return lam[order], None


def jacobi_eig_oracle(a) -> np.ndarray:
    """Sorted (ascending) eigenvalues by cyclic Jacobi rotations.

    Accepts a SymmetricMatrix or a plain array.  Limited to n <= 256;
    iterates until the off-diagonal Frobenius mass is <= 1e-15 ||A||_F,
    raising after 100 sweeps.
    """
    if isinstance(a, SymmetricMatrix):
        a = a.data
    lam, _ = _jacobi_run(a, with_vectors=False)
    return lam


def jacobi_eig_pairs(a):
    """Like jacobi_eig_oracle but also returns the eigenvector matrix."""
    if isinstance(a, SymmetricMatrix):
        a = a.data
    return _jacobi_run(a, with_vectors=True)
