"""Figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..entropy import RDPoint  # noqa: E402
from .evaluate import EvalSummary  # noqa: E402


def plot_loss(log, path: str | Path) -> None:
    """Training loss and its bpp/MSE parts against step."""
    steps = np.array([r[0] for r in log])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    if len(steps):
        axes[0].plot(steps, [r[3] for r in log], lw=0.8)
        axes[1].plot(steps, [r[1] for r in log], lw=0.8, color="tab:green")
        axes[0].set_yscale("log")
    axes[0].set(xlabel="step", ylabel="loss", title="RD loss")
    axes[1].set(xlabel="step", ylabel="bpp", title="rate")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_rd(summary: EvalSummary, path: str | Path, curves: dict[str, Sequence[RDPoint]] | None = None) -> None:
    """Per-image RD scatter with the mean point, plus optional reference curves."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter([r.bpp for r in summary.images], [r.psnr for r in summary.images], s=12, alpha=0.6, label="images")
    ax.scatter([summary.mean_bpp], [summary.mean_psnr], marker="x", s=60, color="k", label="mean")
    for name, pts in (curves or {}).items():
        pts = sorted(pts, key=lambda p: p.bpp)
        ax.plot([p.bpp for p in pts], [p.psnr_db for p in pts], marker="o", label=name)
    ax.set(xlabel="bpp", ylabel="PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_curves(curves: dict[str, Sequence[RDPoint]], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, pts in curves.items():
        pts = sorted(pts, key=lambda p: p.bpp)
        ax.plot([p.bpp for p in pts], [p.psnr_db for p in pts], marker="o", label=name)
    ax.set(xlabel="bpp", ylabel="PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_map(gray: np.ndarray, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(gray, cmap="magma", vmin=0, vmax=255)
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
