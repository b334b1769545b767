"""Dense float64 array helpers shared by the networks and the loss assembly.

NumPy arrays are the tensor type throughout the package. The functions here
add the shape checks and fixed reduction order the rest of the code relies on.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of an ``m x k`` and a ``k x n`` array."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def outer_product_chain(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product ``v1 (x) v2 (x) ... (x) vd`` of rank-1 arrays.

    Element ``(i1, ..., id)`` of the result is ``v1[i1] * ... * vd[id]``.
    """
    if len(vectors) == 0:
        raise ValueError("outer_product_chain needs at least one vector")
    vecs = [np.asarray(v, dtype=DTYPE) for v in vectors]
    for v in vecs:
        if v.ndim != 1:
            raise DimensionError(f"expected rank-1 inputs, got shape {v.shape}")
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def reduce_modes(coeffs: np.ndarray, mode_grids: Sequence[np.ndarray]) -> np.ndarray:
    """Coefficient-weighted sum of equally shaped mode grids.

    Summation runs over the modes in index order so repeated calls are
    bit-identical.
    """
    coeffs = np.asarray(coeffs, dtype=DTYPE)
    if coeffs.ndim != 1 or coeffs.shape[0] != len(mode_grids):
        raise DimensionError(
            f"{coeffs.shape[0] if coeffs.ndim == 1 else coeffs.shape} coefficients "
            f"for {len(mode_grids)} grids"
        )
    if len(mode_grids) == 0:
        raise ValueError("reduce_modes needs at least one grid")
    shape = np.shape(mode_grids[0])
    out = np.zeros(shape, dtype=DTYPE)
    for c, g in zip(coeffs, mode_grids):
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != shape:
            raise DimensionError(f"mode grid shape {g.shape} differs from {shape}")
        out += c * g
    return out
