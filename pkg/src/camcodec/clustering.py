"""Cosine k-means over feature tokens.

Training runs a few assign/update iterations per step and blends the result
into the stored centers with an exponential moving average. At inference the
centers are frozen and only :func:`assign_inference` is used.

Cluster indices are 0-based.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .numerics import ConfigurationError, ContractError, ShapeError

log = logging.getLogger(__name__)

EPS = 1e-8


@dataclass(frozen=True)
class ClusterModel:
    centers: np.ndarray  # (K, d), unit rows
    ema_decay: float = 0.99
    iters: int = 5

    def __post_init__(self):
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ConfigurationError(f"centers must be (K, d) with K >= 1, got {self.centers.shape}")
        if self.iters < 1:
            raise ConfigurationError("iters must be >= 1")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def init_centers(tokens: np.ndarray, k: int, ema_decay: float = 0.99, iters: int = 5) -> ClusterModel:
    """Split the token sequence into ``k`` consecutive segments and normalize each mean.

    A segment whose mean is the zero vector gets the unit basis vector
    ``e_(s mod d)``.
    """
    tokens = np.asarray(tokens)
    n, d = tokens.shape
    if k < 1 or n < k:
        raise ConfigurationError(f"need at least k={k} tokens, got {n}")
    centers = np.empty((k, d), dtype=tokens.dtype)
    for s in range(k):
        seg = tokens[(s * n) // k: ((s + 1) * n) // k]
        m = seg.astype(np.float64).mean(axis=0)
        norm = np.linalg.norm(m)
        if norm > 0:
            centers[s] = m / norm
        else:
            centers[s] = 0
            centers[s, s % d] = 1
    return ClusterModel(centers=centers, ema_decay=ema_decay, iters=iters)


def cosine_similarity(tokens: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(N, K) cosine matrix; zero tokens score 0 against every center."""
    if tokens.shape[-1] != centers.shape[-1]:
        raise ShapeError(f"token width {tokens.shape[-1]} != center width {centers.shape[-1]}")
    tn = np.linalg.norm(tokens, axis=1, keepdims=True)
    cn = np.linalg.norm(centers, axis=1)
    return (tokens @ centers.T) / (tn * cn + EPS)


def assign(tokens: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the most cosine-similar center per token (lowest index on ties)."""
    return np.argmax(cosine_similarity(tokens, centers), axis=1)


def update_centers(tokens: np.ndarray, g: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Normalized token sum per cluster; empty or zero-sum clusters keep their center."""
    k = centers.shape[0]
    if g.size and (g.min() < 0 or g.max() >= k):
        raise ContractError(f"assignment outside [0, {k})")
    sums = np.zeros(centers.shape, dtype=np.float64)
    np.add.at(sums, g, tokens)
    norms = np.linalg.norm(sums, axis=1)
    counts = np.bincount(g, minlength=k)
    out = centers.copy()
    keep = norms > 0
    out[keep] = (sums[keep] / norms[keep, None]).astype(centers.dtype)
    degenerate = (counts > 0) & ~keep
    if degenerate.any():
        log.info("clusters %s have zero token sum; keeping previous centers", np.flatnonzero(degenerate))
    return out


def kmeans_iterations(tokens: np.ndarray, centers: np.ndarray, iters: int):
    """Yield ``(assignments, objective, tentative_centers)`` for each iteration.

    The objective is the mean cosine between each token and its assigned center,
    measured right after the assignment step.
    """
    work = centers
    rows = np.arange(tokens.shape[0])
    for _ in range(iters):
        sim = cosine_similarity(tokens, work)
        g = np.argmax(sim, axis=1)
        objective = float(sim[rows, g].mean()) if tokens.shape[0] else 0.0
        work = update_centers(tokens, g, work)
        yield g, objective, work


def kmeans_train_step(tokens: np.ndarray, model: ClusterModel) -> tuple[np.ndarray, ClusterModel]:
    """Run ``model.iters`` iterations, then EMA-blend and re-normalize the centers."""
    g = None
    tentative = model.centers
    for g, _, tentative in kmeans_iterations(tokens, model.centers, model.iters):
        pass
    decay = model.ema_decay
    if decay == 1.0:
        return g, model
    blended = decay * model.centers.astype(np.float64) + (1 - decay) * tentative
    norms = np.linalg.norm(blended, axis=1, keepdims=True)
    blended = np.where(norms > 0, blended / np.where(norms > 0, norms, 1), tentative)
    blended = blended.astype(model.centers.dtype)
    # centers that never moved (empty clusters) skip the blend's rounding error
    still = (tentative == model.centers).all(axis=1)
    blended[still] = model.centers[still]
    return g, replace(model, centers=blended)


def assign_inference(tokens: np.ndarray, model: ClusterModel) -> np.ndarray:
    return assign(tokens, model.centers)
