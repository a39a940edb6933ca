"""Dense float64 matrix helpers with strict shape checking.

All numeric code in this package works on 2-D row-major ``numpy.float64``
arrays: samples as rows, features as columns. The helpers here validate
shapes and finiteness at API boundaries. Silent broadcasting is avoided in
favour of explicit row-vector and row-scale operations, which catch shape
bugs instead of propagating them.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

# Type alias used throughout the package: a 2-D float64 ndarray.
Matrix = np.ndarray


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce ``data`` to a contiguous 2-D float64 array, checking its shape."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got shape {a.shape}")
    return a


def require_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    """Raise if ``a`` holds NaN or infinity; return it unchanged otherwise."""
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a: Matrix) -> Matrix:
    return np.ascontiguousarray(a.T)


def row_l2_norms(a: Matrix) -> np.ndarray:
    """Euclidean norm of every row, as a 1-D vector of length ``a.shape[0]``."""
    return np.sqrt(np.sum(a * a, axis=1))


def add_row_vector(a: Matrix, v: np.ndarray) -> Matrix:
    """Add ``v`` to every row of ``a``; lengths must match exactly."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != a.shape[1]:
        raise ShapeError(f"row vector of shape {v.shape} does not fit {a.shape}")
    return a + v[np.newaxis, :]


def scale_rows(a: Matrix, s: np.ndarray) -> Matrix:
    """Multiply row ``k`` of ``a`` by the scalar ``s[k]``."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != a.shape[0]:
        raise ShapeError(f"row scale of shape {s.shape} does not fit {a.shape}")
    return a * s[:, np.newaxis]
