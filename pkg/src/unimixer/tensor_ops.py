"""Dense 2-D kernels with pinned flatten/reshape semantics.

Every array is float64. "Matrix" means a 2-D ndarray, "Vector" a 1-D
ndarray; flattening is always row-major (C order), so
``reshape(flatten_row_major(x), *x.shape)`` is a bit-identical round trip.
All kernels are pure functions and verify that their result is finite.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_matrix",
    "as_vector",
    "matmul",
    "flatten_row_major",
    "reshape",
    "split_even",
    "kron",
    "generalized_kron",
    "softmax_rows",
    "rms_norm",
    "swish",
]

RMS_NORM_EPS = 1e-6


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate / coerce ``x`` to a finite float64 2-D array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate / coerce ``x`` to a finite float64 1-D array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _check_finite(a: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise ValueError(f"{op} produced non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape} (a.cols != b.rows)"
        )
    return _check_finite(a @ b, "matmul")


def flatten_row_major(x) -> np.ndarray:
    """Row-major flatten: out[i*cols + j] = x[i, j]."""
    x = as_matrix(x, "x")
    return x.reshape(-1).copy()


def reshape(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`flatten_row_major`."""
    v = as_vector(v, "v")
    if v.shape[0] != rows * cols:
        raise DimensionError(
            f"cannot reshape length-{v.shape[0]} vector to {rows}x{cols}"
        )
    return v.reshape(rows, cols).copy()


def split_even(v, parts: int) -> list[np.ndarray]:
    """Split into ``parts`` contiguous chunks; concatenation restores ``v``."""
    v = as_vector(v, "v")
    if parts < 1 or v.shape[0] % parts != 0:
        raise DimensionError(
            f"length {v.shape[0]} is not divisible into {parts} even parts"
        )
    size = v.shape[0] // parts
    return [v[i * size : (i + 1) * size].copy() for i in range(parts)]


def kron(a, b) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is a[i, j] * b."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    return _check_finite(np.kron(a, b), "kron")


def generalized_kron(g, blocks: list[np.ndarray]) -> np.ndarray:
    """Block matrix whose block (i, j) is g[i, j] * blocks[j].

    The right factor varies per block *column*: row i of the result is
    [g[i,0]*blocks[0], g[i,1]*blocks[1], ...]. With all blocks identical
    this reduces to the standard Kronecker product.
    """
    g = as_matrix(g, "g")
    if g.shape[0] != g.shape[1]:
        raise DimensionError(f"g must be square, got {g.shape}")
    k = g.shape[0]
    if len(blocks) != k:
        raise DimensionError(f"need {k} blocks to match g {g.shape}, got {len(blocks)}")
    blocks = [as_matrix(z, f"blocks[{j}]") for j, z in enumerate(blocks)]
    side = blocks[0].shape[0]
    for j, z in enumerate(blocks):
        if z.shape != (side, side):
            raise DimensionError(
                f"blocks[{j}] has shape {z.shape}, expected ({side}, {side})"
            )
    out = np.empty((k * side, k * side), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[i * side : (i + 1) * side, j * side : (j + 1) * side] = (
                g[i, j] * blocks[j]
            )
    return _check_finite(out, "generalized_kron")


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax, max-subtracted for stability. Rows sum to 1."""
    x = as_matrix(x, "x")
    if x.size == 0:
        raise DimensionError("softmax_rows: empty input")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return _check_finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")


def rms_norm(v, eps: float = RMS_NORM_EPS) -> np.ndarray:
    """v / sqrt(mean(v^2) + eps). No learned gain. Maps the zero vector to 0."""
    v = as_vector(v, "v")
    if v.size == 0:
        raise DimensionError("rms_norm: empty input")
    if eps <= 0:
        raise ValueError(f"rms_norm: eps must be > 0, got {eps}")
    return _check_finite(v / np.sqrt(np.mean(v * v) + eps), "rms_norm")


def rms_norm_rows(x: np.ndarray, eps: float = RMS_NORM_EPS) -> np.ndarray:
    """Row-wise :func:`rms_norm` for batched 2-D inputs."""
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)


def swish(v) -> np.ndarray:
    """swish(v) = v * sigmoid(v), elementwise."""
    v = as_vector(v, "v")
    if v.size == 0:
        raise DimensionError("swish: empty input")
    return _check_finite(v * _sigmoid(v), "swish")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function (any shape)."""
    return _sigmoid(np.asarray(x, dtype=np.float64))
