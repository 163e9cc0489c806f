"""Cluster-contiguous token reordering and its inverse."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, ShapeError, Tensor, permute_rows


@dataclass(frozen=True)
class Permutation:
    forward: np.ndarray  # reordered position i reads original token forward[i]
    inverse: np.ndarray

    def __len__(self) -> int:
        return self.forward.shape[-1]


def build_permutation(g: np.ndarray, k: int) -> Permutation:
    """Stable grouping by cluster index: cluster 0 first, raster order inside a cluster.

    ``g`` may be (N,) or a batch (B, N); the permutation has the same shape.
    """
    g = np.asarray(g)
    if g.size and (g.min() < 0 or g.max() >= k):
        raise ContractError(f"cluster ids must lie in [0, {k})")
    forward = np.argsort(g, axis=-1, kind="stable")
    inverse = np.empty_like(forward)
    np.put_along_axis(inverse, forward, np.broadcast_to(np.arange(g.shape[-1]), g.shape), axis=-1)
    return Permutation(forward=forward, inverse=inverse)


def _check(index: np.ndarray, n: int):
    if index.shape[-1] != n:
        raise ShapeError(f"permutation over {index.shape[-1]} tokens applied to {n}")


def apply(p: Permutation, x):
    """Reorder rows: ``out[i] = x[forward[i]]``. Accepts arrays or tape tensors."""
    return _gather(p.forward, x)


def restore(p: Permutation, x):
    return _gather(p.inverse, x)


def _gather(index: np.ndarray, x):
    if isinstance(x, Tensor):
        batched = x.ndim == 3
        _check(index, x.shape[-2])
        if batched:
            return permute_rows(x, index)
        out = permute_rows(x.reshape(1, *x.shape), index[None])
        return out.reshape(out.shape[1:])
    x = np.asarray(x)
    _check(index, x.shape[-2])
    if index.ndim == 1:
        return x[index]
    return np.take_along_axis(x, index[..., None], axis=-2)
