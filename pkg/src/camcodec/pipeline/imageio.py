"""Binary PPM (P6) / PGM (P5) images and padding helpers."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class InputError(ValueError):
    pass


def read_ppm(path: str | Path) -> np.ndarray:
    """RGB image as float64 in [0, 1], shape (H, W, 3)."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "RGB":
                raise InputError(f"{path}: expected a binary RGB PPM, got {im.format} {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError(f"{path}: empty image")
    return arr.astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a float [0, 1] or uint8 (H, W, 3) array as P6."""
    arr = image if image.dtype == np.uint8 else to_uint8(image)
    Image.fromarray(arr, mode="RGB").save(path, format="PPM")


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Write a uint8 (H, W) array as P5."""
    Image.fromarray(np.asarray(gray, dtype=np.uint8), mode="L").save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise InputError(f"{path}: expected a grayscale PGM")
        return np.asarray(im, dtype=np.uint8)


def pad_to_multiple(image: np.ndarray, multiple: int = 16) -> np.ndarray:
    """Reflection-pad the bottom/right edges of (H, W, C) up to a multiple."""
    h, w = image.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".ppm")
    if not files:
        raise InputError(f"no .ppm images in {d}")
    return files
