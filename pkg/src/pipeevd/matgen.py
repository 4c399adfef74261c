"""Symmetric test matrices with prescribed eigenvalue distributions.

A = V diag(lam) V^T with Haar-random orthogonal V.  Six spectrum
families are supported; the condition-controlled ones pin the largest
eigenvalue to lambda_max exactly and the max/min ratio to cond.

Randomness comes from Philox counter streams: the top-level seed is
split with SeedSequence.spawn so the spectrum draw (Normal/Uniform)
and the orthogonal basis draw use independent, reproducible streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SymmetricMatrix

KINDS = ("Cluster0", "Cluster1", "Geometric", "Arithmetic", "Normal", "Uniform")
_KIND_LOOKUP = {k.lower(): k for k in KINDS}


def canonical_kind(name: str) -> str:
    """Case-insensitive spectrum family lookup; raises on unknown names."""
    try:
        return _KIND_LOOKUP[name.lower()]
    except KeyError:
        raise ValueError(f"unknown spectrum kind {name!r}; choose from {KINDS}") from None


@dataclass
class SpectrumSpec:
    kind: str
    n: int
    cond: float = 1e8
    lambda_max: float = 1e6
    seed: int = 0

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.cond < 1.0:
            raise ValueError("cond must be >= 1")
        if self.lambda_max <= 0.0:
            raise ValueError("lambda_max must be positive")


def _philox(seed_entropy) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_entropy))


def eigen_spectrum(spec: SpectrumSpec) -> np.ndarray:
    """n eigenvalues for the given family, sorted ascending.

    Cluster0: one eigenvalue at lambda_max, the rest at lambda_max/cond.
    Cluster1: n-1 eigenvalues at lambda_max, one at lambda_max/cond.
    Geometric/Arithmetic: log- and linear ramps between the same endpoints.
    Normal/Uniform: i.i.d. draws, ignoring cond and lambda_max.
    """
    n = spec.n
    if n < 2:
        raise ValueError("spectrum needs n >= 2")
    lmax, cond = spec.lambda_max, spec.cond
    if spec.kind == "Cluster0":
        lam = np.full(n, lmax / cond)
        lam[0] = lmax
    elif spec.kind == "Cluster1":
        lam = np.full(n, lmax)
        lam[-1] = lmax / cond
    elif spec.kind == "Geometric":
        i = np.arange(n, dtype=np.float64)
        lam = lmax * cond ** (-i / (n - 1))
    elif spec.kind == "Arithmetic":
        i = np.arange(n, dtype=np.float64)
        lam = lmax * (1.0 - (1.0 - 1.0 / cond) * i / (n - 1))
    elif spec.kind == "Normal":
        rng = _philox(np.random.SeedSequence(spec.seed).spawn(2)[0])
        lam = rng.standard_normal(n)
    elif spec.kind == "Uniform":
        rng = _philox(np.random.SeedSequence(spec.seed).spawn(2)[0])
        lam = rng.uniform(-1.0, 1.0, n)
    else:  # unreachable after canonical_kind
        raise ValueError(spec.kind)
    return np.sort(lam)


def random_orthogonal(n: int, seed) -> np.ndarray:
    """Haar-distributed orthogonal matrix, deterministic for a fixed seed.

    QR of a standard-Gaussian matrix with the R diagonal's signs fixed
    (zero treated as +).  ``seed`` may be an int or a SeedSequence.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = _philox(seed)
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    signs = np.where(d < 0.0, -1.0, 1.0)
    return np.asfortranarray(q * signs)


def assemble(v: np.ndarray, lam: np.ndarray, sym_tol: float = 1e-13) -> SymmetricMatrix:
    """A = V diag(lam) V^T, symmetrized by averaging with its transpose."""
    v = np.asarray(v, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    n = v.shape[0]
    if v.shape != (n, n) or lam.shape != (n,):
        raise ValueError("V must be n x n and lam length n")
    a = (v * lam) @ v.T
    a = (a + a.T) / 2.0
    return SymmetricMatrix(n=n, data=a, sym_tol=sym_tol)


def generate(spec: SpectrumSpec):
    """Build (SymmetricMatrix, spectrum) for a SpectrumSpec.

    The basis stream is the second SeedSequence child, so the same seed
    used for a Normal/Uniform spectrum draw never collides with it.
    """
    lam = eigen_spectrum(spec)
    basis_seed = np.random.SeedSequence(spec.seed).spawn(2)[1]
    v = random_orthogonal(spec.n, basis_seed)
    return assemble(v, lam), lam
