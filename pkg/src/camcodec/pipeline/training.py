"""Rate-distortion training loop."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..numerics import Adam, NumericError, backward
from ..transforms import CompressionModel
from . import checkpoint
from .codec import rd_forward
from .imageio import InputError, list_images, read_ppm

LOG_HEADER = ("step", "bpp", "mse", "loss")


@dataclass
class TrainResult:
    model: CompressionModel
    log: list[tuple[int, float, float, float]] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    def losses(self) -> np.ndarray:
        return np.array([row[3] for row in self.log])


def load_images(directory: str | Path) -> list[np.ndarray]:
    return [read_ppm(p) for p in list_images(directory)]


def random_crops(images: Sequence[np.ndarray], batch: int, crop: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((batch, crop, crop, 3))
    picks = rng.integers(len(images), size=batch)
    for i, k in enumerate(picks):
        img = images[k]
        h, w = img.shape[:2]
        top = rng.integers(h - crop + 1)
        left = rng.integers(w - crop + 1)
        out[i] = img[top: top + crop, left: left + crop]
        if rng.random() < 0.5:
            out[i] = out[i, :, ::-1]
    return out


def _snapshot(model: CompressionModel):
    # parameter updates replace arrays rather than mutate them, so references suffice
    params = {k: p.data for k, p in model.named_parameters().items()}
    clusters = {k: b.cluster for k, b in model.cam_blocks().items()}
    return params, clusters


def _restore(model: CompressionModel, snap) -> None:
    params, clusters = snap
    for k, p in model.named_parameters().items():
        p.data = params[k]
    for k, b in model.cam_blocks().items():
        b.cluster = clusters[k]


def write_log(path: str | Path, log) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_HEADER)
        for step, bpp, mse, loss in log:
            writer.writerow([step, f"{bpp:.6f}", f"{mse:.6f}", f"{loss:.6f}"])


def train(model: CompressionModel, images: Sequence[np.ndarray], steps: int, rd_lambda: float,
          seed: int = 0, batch_size: int = 4, crop: int = 64, lr: float = 1e-4, clip_norm: float = 1.0,
          checkpoint_path: str | Path | None = None, log_path: str | Path | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Minimize the mean RD loss over random crops with Adam.

    A non-finite loss (or a numeric error inside the forward pass) stops
    training and rolls the model back to the last good step.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if not images:
        raise InputError("no training images")
    for img in images:
        if img.shape[0] < crop or img.shape[1] < crop:
            raise InputError(f"image {img.shape[:2]} is smaller than the {crop}x{crop} crop")
    rng = np.random.default_rng(seed)
    params = {k: p for k, p in model.named_parameters().items()}
    for p in params.values():
        p.requires_grad = True
    opt = Adam(params, lr=lr, clip_norm=clip_norm)
    result = TrainResult(model=model)
    for step in range(1, steps + 1):
        snap = _snapshot(model)
        batch = random_crops(images, batch_size, crop, rng)
        try:
            out = rd_forward(model, batch, rd_lambda, rng=rng, mode="train")
            loss = float(out.loss.item())
            if not np.isfinite(loss):
                raise NumericError(f"loss is {loss}")
            grads = backward(out.loss)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericError("non-finite gradient")
        except NumericError as exc:
            _restore(model, snap)
            result.aborted = True
            result.message = f"diverged at step {step}: {exc}"
            break
        opt.step(grads)
        result.log.append((step, float(out.bpp.item()), float(out.mse.item()), loss))
        if progress is not None:
            progress(step, loss)
    if checkpoint_path is not None:
        checkpoint.save(model, checkpoint_path)
    if log_path is not None:
        write_log(log_path, result.log)
    return result
