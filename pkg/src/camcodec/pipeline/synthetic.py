"""Synthetic training/evaluation images: smooth gradients mixed with textures."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_ppm


def synthetic_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One (size, size, 3) image in [0, 1]."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.empty((size, size, 3))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    for ch in range(3):
        img[..., ch] = rng.uniform(0.2, 0.8) + rng.uniform(-0.4, 0.4) * (ramp - ramp.mean())
    kind = rng.integers(4)
    if kind == 0:    # stripes
        f = rng.uniform(2, 10)
        tex = np.sin(2 * np.pi * f * (np.cos(angle + 1) * xx + np.sin(angle + 1) * yy))
    elif kind == 1:  # checkerboard
        n = rng.integers(2, 9)
        tex = np.where((np.floor(xx * n) + np.floor(yy * n)) % 2 == 0, 1.0, -1.0)
    elif kind == 2:  # blobs
        tex = np.zeros_like(xx)
        for _ in range(rng.integers(2, 6)):
            cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.25)
            tex += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        tex = tex / max(tex.max(), 1e-9) * 2 - 1
    else:            # smoothed noise
        noise = rng.normal(size=(size // 8 + 1, size // 8 + 1))
        idx = np.linspace(0, size // 8, size)
        tex = np.array([[noise[int(a), int(b)] for b in idx] for a in idx])
        tex = np.clip(tex, -2, 2) / 2
    color = rng.uniform(-1, 1, size=3)
    img += rng.uniform(0.1, 0.3) * tex[..., None] * color
    img += rng.normal(0, 0.01, size=img.shape)
    return np.clip(img, 0, 1)


def synthetic_dataset(count: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """(count, size, size, 3) float64 images."""
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_image(rng, size) for _ in range(count)])


def write_dataset(directory: str | Path, count: int, size: int = 64, seed: int = 0) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(synthetic_dataset(count, size, seed)):
        p = d / f"img{i:04d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    return paths
