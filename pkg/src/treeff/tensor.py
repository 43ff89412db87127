"""Dense tensor helpers: validated matmul, row gather, exact scalar GeLU.

Matrices are 2-D C-contiguous numpy arrays in float32 or float64. Given
finite inputs at sane scales these helpers return finite outputs; nothing
here masks an overflow.
"""

import numpy as np

from .errors import BoundsError, DimensionError
from .kernels import INV_SQRT2, gelu_py

__all__ = ["INV_SQRT2", "as_matrix", "matmul", "gather_rows", "gelu"]


def as_matrix(a, name="operand"):
    """Coerce to a 2-D C-contiguous ndarray or raise DimensionError."""
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def matmul(a, b_t):
    """a @ b_t.T with both operands row-major; b_t holds one output column per row."""
    a = as_matrix(a, "left operand")
    b_t = as_matrix(b_t, "right operand")
    if a.shape[1] != b_t.shape[1]:
        raise DimensionError(
            f"inner dimensions differ: left is {a.shape}, right (transposed) is {b_t.shape}"
        )
    return a @ b_t.T


def gather_rows(m, indices):
    """Stack m[indices[0]], m[indices[1]], ... into a new matrix."""
    m = as_matrix(m, "matrix")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"indices must be 1-D, got shape {idx.shape}")
    if idx.size:
        lo = int(idx.min())
        hi = int(idx.max())
        if lo < 0 or hi >= m.shape[0]:
            bad = lo if lo < 0 else hi
            raise BoundsError(
                f"row index {bad} out of range for matrix with {m.shape[0]} rows"
            )
    return m[idx]


def gelu(x):
    """Exact GeLU of one scalar: x * Phi(x) via the error function, in float64."""
    return gelu_py(float(x))
