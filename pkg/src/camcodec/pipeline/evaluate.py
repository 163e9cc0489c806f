"""Rate-distortion evaluation and the Bjontegaard delta rate."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..entropy import RDPoint
from ..transforms import CompressionModel
from .codec import decode_bytes, encode_array
from .imageio import list_images, read_ppm, to_uint8

PSNR_CAP = 99.0


class EvaluationError(ValueError):
    pass


def psnr_from_mse(mse: float) -> float:
    """PSNR in dB on the 8-bit scale, capped at 99 dB (zero MSE included)."""
    if mse < 0:
        raise EvaluationError("negative MSE")
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse))


def mse_8bit(a: np.ndarray, b: np.ndarray) -> float:
    d = to_uint8(a).astype(np.float64) - to_uint8(b).astype(np.float64)
    return float((d * d).mean())


@dataclass(frozen=True)
class ImageResult:
    name: str
    pixels: int
    file_bytes: int
    mse: float

    @property
    def bpp(self) -> float:
        return 8.0 * self.file_bytes / self.pixels

    @property
    def psnr(self) -> float:
        return psnr_from_mse(self.mse)


@dataclass(frozen=True)
class EvalSummary:
    images: list[ImageResult]

    @property
    def mean_bpp(self) -> float:
        """Total coded bits over total pixels."""
        return 8.0 * sum(r.file_bytes for r in self.images) / sum(r.pixels for r in self.images)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.images]))

    def rd_point(self, rd_lambda: float = 0.0) -> RDPoint:
        bits = 8.0 * sum(r.file_bytes for r in self.images)
        return RDPoint(bpp=self.mean_bpp, psnr_db=self.mean_psnr, rate_bits=bits,
                       distortion=float(np.mean([r.mse for r in self.images])), rd_lambda=rd_lambda)


def evaluate_images(images: Sequence[np.ndarray], model: CompressionModel,
                    names: Sequence[str] | None = None) -> EvalSummary:
    """Encode and decode every image; rates come from the coded byte count."""
    names = names or [f"img{i:04d}" for i in range(len(images))]
    results = []
    for name, img in zip(names, images):
        enc = encode_array(img, model)
        x_hat = decode_bytes(enc.data, model)
        results.append(ImageResult(name=name, pixels=img.shape[0] * img.shape[1],
                                   file_bytes=len(enc.data), mse=mse_8bit(img, x_hat)))
    if not results:
        raise EvaluationError("no images to evaluate")
    return EvalSummary(results)


def evaluate_directory(directory: str | Path, model: CompressionModel) -> EvalSummary:
    paths = list_images(directory)
    return evaluate_images([read_ppm(p) for p in paths], model, [p.name for p in paths])


def write_rd_csv(path: str | Path, summary: EvalSummary) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image", "pixels", "bytes", "bpp", "psnr_db"])
        for r in summary.images:
            writer.writerow([r.name, r.pixels, r.file_bytes, f"{r.bpp:.6f}", f"{r.psnr:.4f}"])
        writer.writerow(["mean", sum(r.pixels for r in summary.images), sum(r.file_bytes for r in summary.images),
                         f"{summary.mean_bpp:.6f}", f"{summary.mean_psnr:.4f}"])


def read_rd_points(path: str | Path) -> list[RDPoint]:
    """RD points from a CSV with ``bpp`` and ``psnr_db`` columns (mean rows skipped)."""
    points = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row.get("image") == "mean":
                continue
            points.append(RDPoint(bpp=float(row["bpp"]), psnr_db=float(row["psnr_db"]),
                                  rate_bits=0.0, distortion=0.0))
    return points


def bd_rate(curve_a: Sequence[RDPoint], curve_b: Sequence[RDPoint]) -> float:
    """Average bitrate difference of ``curve_b`` relative to ``curve_a`` in percent.

    Each curve's log-rate is fitted as a cubic polynomial of PSNR; the fits are
    integrated over the overlapping PSNR interval. Negative means ``curve_b``
    needs fewer bits for the same quality.
    """
    fits, ranges = [], []
    for label, curve in (("a", curve_a), ("b", curve_b)):
        if len(curve) < 4:
            raise EvaluationError(f"curve {label} needs at least 4 points, has {len(curve)}")
        psnr = np.array([p.psnr_db for p in curve], dtype=np.float64)
        rate = np.array([p.bpp for p in curve], dtype=np.float64)
        if (rate <= 0).any():
            raise EvaluationError(f"curve {label} has a non-positive rate")
        if len(np.unique(psnr)) < 4:
            raise EvaluationError(f"curve {label} needs 4 distinct PSNR values")
        fits.append(np.polynomial.Polynomial.fit(psnr, np.log(rate), 3))
        ranges.append((psnr.min(), psnr.max()))
    lo = max(ranges[0][0], ranges[1][0])
    hi = min(ranges[0][1], ranges[1][1])
    if hi <= lo:
        raise EvaluationError("PSNR ranges do not overlap")
    ia, ib = (f.integ() for f in fits)
    avg = ((ib(hi) - ib(lo)) - (ia(hi) - ia(lo))) / (hi - lo)
    return float((np.exp(avg) - 1.0) * 100.0)
