"""Orthonormal 2D DCT-II over square patches, differentiable through the tape.

The transform is a pair of basis-matrix multiplications, Y = C X C^T, so the
adjoint is just the inverse transform and Parseval holds exactly.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import Tensor, _record, as_tensor


@lru_cache(maxsize=None)
def dct_matrix(s: int) -> np.ndarray:
    """Orthonormal DCT-II basis: row k is the k-th cosine mode over s samples."""
    n = np.arange(s)
    c = np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / (2 * s)) * np.sqrt(2.0 / s)
    c[0, :] = 1.0 / np.sqrt(s)
    c.setflags(write=False)
    return c


def dct2d(patch, inverse: bool = False) -> Tensor:
    """2D DCT-II (or its exact inverse) of the trailing two s x s axes."""
    patch = as_tensor(patch)
    if patch.data.ndim < 2:
        raise ValueError(f"dct2d: need at least 2 dims, got shape {patch.data.shape}")
    s = patch.data.shape[-1]
    if patch.data.shape[-2] != s:
        raise ValueError(f"dct2d: trailing dims must be square, got {patch.data.shape}")
    if s < 2 or s % 2:
        raise ValueError(f"dct2d: patch side must be even and >= 2, got {s}")
    c = dct_matrix(s)
    if inverse:
        out_data = c.T @ (patch.data @ c)
        vjp = lambda g: c @ (g @ c.T)
    else:
        out_data = c @ (patch.data @ c.T)
        vjp = lambda g: c.T @ (g @ c)
    return _record(patch.tape, out_data, [(patch, vjp)])
