"""
A small-matrix tour of the two-stage reduction
==============================================

Dense -> band -> tridiagonal -> eigenpairs, with every intermediate
printed small enough to eyeball.  Run from the repo root after an
editable install: python3 demos/two_stage_tour.py
"""

import numpy as np

from pipeevd import (SbrConfig, SpectrumSpec, bc_back_apply, bc_reduce,
                     generate, sbr_reduce, tridiag_eig)
from pipeevd.core import apply_block_reflector

np.set_printoptions(precision=3, suppress=True, linewidth=120)

n, b = 16, 4
a, lam_planted = generate(SpectrumSpec("Uniform", n, seed=3))
print(f"dense symmetric input, n={n}:")
print(a.data)

# stage one: blocked Householder panels push everything below the
# b-th subdiagonal to zero
band, factors = sbr_reduce(a, SbrConfig(b=b))
dense_band = band.to_dense()
print(f"\nafter band reduction (bandwidth {b}), magnitudes:")
print(np.where(np.abs(dense_band) > 1e-12, np.round(dense_band, 2), 0.0))

# stage two: bulge chasing peels the band down to three diagonals
tri, uset = bc_reduce(band)
print(f"\ntridiagonal main diagonal:\n{tri.d}")
print(f"off diagonal:\n{tri.e}")
print(f"bulge reflectors created: {len(uset)}")

# the host solves the tridiagonal problem
res = tridiag_eig(tri, want_vectors=True)
print(f"\neigenvalues (ascending):\n{res.lam}")
print(f"planted spectrum:\n{lam_planted}")
print(f"max |difference| = {np.abs(res.lam - lam_planted).max():.2e}")

# back transformation: undo the chase on Q_d, then undo the panels.
# this is the conventional column order; the pipeline normally uses the
# reordered variant so it can start before the solver finishes.
q = bc_back_apply(uset, res.Q, direction="conventional")
for pan in reversed(factors.panels):
    rows = pan.W.shape[0]
    apply_block_reflector(q[n - rows:, :], pan, side="left")

resid = np.linalg.norm(a.data - (q * res.lam) @ q.T) / np.linalg.norm(a.data)
orth = np.linalg.norm(np.eye(n) - q @ q.T) / n
print(f"\n||A - Q diag(lam) Q^T||_F / ||A||_F = {resid:.2e}")
print(f"||I - Q Q^T||_F / n               = {orth:.2e}")
