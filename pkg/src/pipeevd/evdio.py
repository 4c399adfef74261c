"""Binary matrix I/O ("EVD1" format).

Layout, everything little-endian:

    magic        b"EVD1"
    square:      u64 n,             then n*n     float64, column-major
    rectangular: u64 rows, u64 cols, then rows*cols float64, column-major

The two layouts share the magic byte string and are told apart by total
file size; rectangular files must have cols >= 1, which makes the size
test unambiguous (rows*cols + 1 = rows^2 has no integer solution with
cols >= 1 except the excluded degenerate rows=1, cols=0).

Eigenvalue vectors are stored as n x 1 rectangular files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EVD1"


def write_square(path, a: np.ndarray) -> None:
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"square matrix required, got {a.shape}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", n))
        f.write(a.astype("<f8", copy=False).tobytes(order="F"))


def write_rect(path, a: np.ndarray) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    rows, cols = a.shape
    if cols < 1 or rows < 1:
        raise ValueError("empty matrix")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<QQ", rows, cols))
        f.write(a.astype("<f8", copy=False).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    """Read either layout; shape of the result tells which it was."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an EVD1 file")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated EVD1 file")
    body = len(raw) - 4
    (n,) = struct.unpack_from("<Q", raw, 4)
    if body == 8 + 8 * n * n:
        data = np.frombuffer(raw, dtype="<f8", count=n * n, offset=12)
        return data.reshape((n, n), order="F").copy(order="F")
    if body < 20:
        raise ValueError(f"{path}: truncated EVD1 file")
    rows, cols = struct.unpack_from("<QQ", raw, 4)
    if cols < 1 or body != 16 + 8 * rows * cols:
        raise ValueError(f"{path}: EVD1 header inconsistent with file size")
    data = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=20)
    return data.reshape((rows, cols), order="F").copy(order="F")


def write_vector(path, v: np.ndarray) -> None:
    write_rect(path, np.asarray(v, dtype=np.float64).reshape(-1, 1))


def read_vector(path) -> np.ndarray:
    a = read_matrix(path)
    if a.shape[1] != 1:
        raise ValueError(f"{path}: expected a column vector, got {a.shape}")
    return a[:, 0].copy()
