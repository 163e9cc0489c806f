"""Diagnostics: effective receptive field maps and cluster masks."""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..numerics import Tensor, backward, conv2d, no_grad
from ..numerics import sum as tsum
from ..transforms import CamBlock, CompressionModel, ConfigurationError, Module
from ..transforms.blocks import _uniform
from .codec import encode_array
from .imageio import pad_to_multiple, write_pgm

ERF_CLIP = 0.20


# ---------------------------------------------------------------------------
# effective receptive field


def erf_gradient(forward: Callable[[Tensor], Tensor], image: np.ndarray) -> np.ndarray:
    """Per-pixel gradient magnitude of the central output element's L1 norm.

    ``forward`` maps a (1, H, W, 3) tensor to a (1, h, w, C) feature map. The
    result is the Euclidean norm of the input gradient over colour channels,
    shape (H, W).
    """
    x = Tensor(np.asarray(image)[None], requires_grad=True)
    out = forward(x)
    _, h, w, _ = out.shape
    centre = out[0, h // 2, w // 2, :]
    # L1 norm; the sign is a constant so its gradient is sign(centre)
    l1 = tsum(centre * Tensor(np.sign(centre.data)))
    grads = backward(l1)
    g = grads.get(x, np.zeros_like(x.data))[0]
    return np.sqrt((g.astype(np.float64) ** 2).sum(axis=-1))


def clip_erf(magnitude: np.ndarray, clip: float = ERF_CLIP) -> np.ndarray:
    return np.clip(magnitude, 0.0, clip)


def erf_to_8bit(magnitude: np.ndarray, clip: float = ERF_CLIP) -> np.ndarray:
    return np.rint(clip_erf(magnitude, clip) / clip * 255.0).astype(np.uint8)


def erf_map(model: CompressionModel, image: np.ndarray, out_path: str | Path | None = None) -> np.ndarray:
    """Clipped ERF of the analysis transform's central latent element, as an 8-bit map."""
    h, w = image.shape[:2]
    x = pad_to_multiple(np.asarray(image, dtype=model.dtype), 16)
    mag = erf_gradient(model.analysis, x)[:h, :w]
    gray = erf_to_8bit(mag)
    if out_path is not None:
        write_pgm(out_path, gray)
    return gray


def conv_receptive_radius(kernels: Sequence[int], strides: Sequence[int] | None = None) -> int:
    """Half-width of the theoretical receptive field of a conv stack, in input pixels."""
    strides = strides or [1] * len(kernels)
    radius, jump = 0, 1
    for k, s in zip(kernels, strides):
        radius += (k // 2) * jump
        jump *= s
    return radius


def outside_radius_mass(magnitude: np.ndarray, radius: int) -> float:
    """Total map mass strictly outside the square of half-width ``radius`` around the centre."""
    h, w = magnitude.shape
    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    outside = (np.abs(yy - cy) > radius) | (np.abs(xx - cx) > radius)
    return float(magnitude[outside].sum())


class ConvStack(Module):
    """Stride-1 square convolutions chained without nonlinearities."""

    def __init__(self, depth: int, dim: int, rng, kernel: int = 3, dtype=np.float64, cin: int = 3):
        super().__init__()
        self.kernels = [kernel] * depth
        self.layers = []
        for i in range(depth):
            layer = Module()
            layer.weight = layer.register("weight", _uniform(rng, (kernel, kernel, cin if i == 0 else dim, dim),
                                                             kernel * kernel * (cin if i == 0 else dim), dtype))
            self.layers.append(self.add(f"conv{i}", layer))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = conv2d(x, layer.weight, None, stride=1)
        return x

    @property
    def radius(self) -> int:
        return conv_receptive_radius(self.kernels)


class CamStack(Module):
    """A 3x3 embedding convolution followed by CAM blocks at full resolution."""

    def __init__(self, blocks: int, dim: int, rng, d_state: int = 8, k: int = 4, dtype=np.float64):
        super().__init__()
        self.embed = self.add("embed", ConvStack(1, dim, rng, dtype=dtype))
        self.blocks = [self.add(f"cam{i}", CamBlock(dim, d_state, k, rng, dtype)) for i in range(blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        x = self.embed(x)
        for blk in self.blocks:
            x = blk(x, training=False)
        return x


def mean_erf(forward: Callable[[Tensor], Tensor], images: Sequence[np.ndarray]) -> np.ndarray:
    """Clipped ERF magnitude averaged over several inputs."""
    return np.mean([clip_erf(erf_gradient(forward, img)) for img in images], axis=0)


# ---------------------------------------------------------------------------
# cluster masks


def stage_blocks(model: CompressionModel, stage: int) -> list[CamBlock]:
    if stage not in model.stages:
        raise ConfigurationError(f"stage must be 1..6, got {stage}")
    blocks = [b.cam for b in model.stages[stage] if b.cam is not None]
    if not blocks:
        raise ConfigurationError(f"stage {stage} has no CAM block")
    return blocks


def cluster_masks(model: CompressionModel, image: np.ndarray, stage: int, block: int = 0,
                  out_dir: str | Path | None = None) -> np.ndarray:
    """(K, h, w) uint8 masks, 255 where the stage's tokens fall in cluster k.

    The image goes through the full encode path so synthesis stages see the
    decoded latent.
    """
    blocks = stage_blocks(model, stage)
    if not 0 <= block < len(blocks):
        raise ConfigurationError(f"stage {stage} has {len(blocks)} CAM blocks, asked for {block}")
    with no_grad():
        encode_array(image, model)
    g = blocks[block].last_assignments[0]
    k = blocks[block].k
    masks = np.stack([np.where(g == c, 255, 0).astype(np.uint8) for c in range(k)])
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for c, mask in enumerate(masks):
            write_pgm(d / f"stage{stage}_cluster{c:02d}.pgm", mask)
    return masks
