"""Image encode/decode and the differentiable rate-distortion forward pass."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..coder import build_cdf, rc_decode, rc_encode
from ..entropy import (
    SYMBOL_MIN,
    gaussian_likelihood,
    mse_255,
    pmf_table,
    quantize,
    quantize_symbols,
    symbol_bits,
)
from ..numerics import ConfigurationError, Tensor, log, no_grad
from ..numerics import sum as tsum
from ..transforms import CompressionModel
from .bitstream import CodedFile, FormatError
from .imageio import InputError, pad_to_multiple, read_ppm, write_ppm

PAD_MULTIPLE = 16


@dataclass(frozen=True)
class EncodeStats:
    bpp: float              # from the coded file size
    estimate_bits: float    # ideal code length under the coder's integer frequency tables
    model_bits: float       # ideal code length under the continuous Gaussian model
    file_bytes: int
    z_saturated: int
    y_saturated: int


@dataclass(frozen=True)
class EncodeResult:
    coded: CodedFile
    data: bytes
    reconstruction: np.ndarray  # encoder-side x_hat, (H, W, 3) float in [0, 1]
    stats: EncodeStats


def latent_shapes(height: int, width: int, model: CompressionModel):
    """Shapes of y and z for an image of the given original size."""
    hp = height + (-height) % PAD_MULTIPLE
    wp = width + (-width) % PAD_MULTIPLE
    lh, lw = hp // 16, wp // 16
    zh, zw = _ceil_div(_ceil_div(lh, 2), 2), _ceil_div(_ceil_div(lw, 2), 2)
    cfg = model.config
    return (1, lh, lw, cfg.latent_channels), (1, zh, zw, cfg.hyper_channels)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _prior_params(model: CompressionModel, z_shape):
    scale = np.broadcast_to(model.prior.scale().data.astype(np.float64), z_shape)
    loc = np.broadcast_to(model.prior.loc.data.astype(np.float64), z_shape)
    return scale, loc


def _synthesize(model: CompressionModel, y_hat: np.ndarray, hw) -> np.ndarray:
    x_hat = model.synthesis(Tensor(y_hat, dtype=model.dtype)).data
    return np.clip(x_hat[0, : hw[0], : hw[1], :], 0.0, 1.0)


def encode_array(image: np.ndarray, model: CompressionModel) -> EncodeResult:
    """Code an (H, W, 3) image in [0, 1]; also returns the encoder-side reconstruction."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise InputError(f"expected a non-empty (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    x = pad_to_multiple(image, PAD_MULTIPLE)
    with no_grad():
        y = model.analysis(Tensor(x[None], dtype=model.dtype))
        z = model.hyper_encoder(y)
        scale, loc = _prior_params(model, z.shape)
        z_sym, z_sat = quantize_symbols(z.data, 0.0)
        z_tables = build_cdf(pmf_table(scale.reshape(-1), loc.reshape(-1)))
        z_bits = z_tables.ideal_bits(z_sym.reshape(-1) - SYMBOL_MIN)
        z_model_bits = symbol_bits(z_sym, scale, loc)
        z_bytes = rc_encode(z_sym - SYMBOL_MIN, z_tables)

        mu, sigma = model.hyper_decoder(Tensor(z_sym, dtype=model.dtype), y.shape[1:3])
        r, y_sat = quantize_symbols(y.data, mu.data)
        sig = sigma.data.astype(np.float64)
        y_tables = build_cdf(pmf_table(sig.reshape(-1)))
        y_bits = y_tables.ideal_bits(r.reshape(-1) - SYMBOL_MIN)
        y_model_bits = symbol_bits(r, sig)
        y_bytes = rc_encode(r - SYMBOL_MIN, y_tables)
        y_hat = (r.astype(model.dtype) + mu.data).astype(model.dtype)
        x_hat = _synthesize(model, y_hat, (h, w))

    coded = CodedFile(height=h, width=w, config_id=model.config.config_id, z_payload=z_bytes, y_payload=y_bytes)
    data = coded.to_bytes()
    stats = EncodeStats(bpp=8.0 * len(data) / (h * w), estimate_bits=z_bits + y_bits,
                        model_bits=z_model_bits + y_model_bits,
                        file_bytes=len(data), z_saturated=z_sat, y_saturated=y_sat)
    return EncodeResult(coded=coded, data=data, reconstruction=x_hat, stats=stats)


def decode_bytes(data: bytes, model: CompressionModel) -> np.ndarray:
    """Reconstruct the (H, W, 3) image from a coded file."""
    coded = CodedFile.from_bytes(data)
    if coded.config_id != model.config.config_id:
        raise FormatError(f"file config id {coded.config_id:#06x} does not match "
                          f"checkpoint {model.config.config_id:#06x}")
    y_shape, z_shape = latent_shapes(coded.height, coded.width, model)
    with no_grad():
        scale, loc = _prior_params(model, z_shape)
        z_tables = build_cdf(pmf_table(scale.reshape(-1), loc.reshape(-1)))
        z_sym = np.asarray(rc_decode(coded.z_payload, z_tables), dtype=np.int64).reshape(z_shape) + SYMBOL_MIN
        mu, sigma = model.hyper_decoder(Tensor(z_sym, dtype=model.dtype), y_shape[1:3])
        sig = sigma.data.astype(np.float64)
        r = np.asarray(rc_decode(coded.y_payload, build_cdf(pmf_table(sig.reshape(-1)))),
                       dtype=np.int64).reshape(y_shape) + SYMBOL_MIN
        y_hat = (r.astype(model.dtype) + mu.data).astype(model.dtype)
        return _synthesize(model, y_hat, (coded.height, coded.width))


def encode_image(image_path: str | Path, model: CompressionModel, out_path: str | Path) -> EncodeResult:
    result = encode_array(read_ppm(image_path), model)
    Path(out_path).write_bytes(result.data)
    return result


def decode_image(coded_path: str | Path, model: CompressionModel, out_path: str | Path) -> np.ndarray:
    x_hat = decode_bytes(Path(coded_path).read_bytes(), model)
    write_ppm(out_path, x_hat)
    return x_hat


# ---------------------------------------------------------------------------
# training forward


@dataclass
class RDOutput:
    loss: Tensor
    bpp: Tensor
    mse: Tensor
    x_hat: Tensor


RD_MODES = ("train", "eval", "smooth")


def rd_forward(model: CompressionModel, x: np.ndarray | Tensor, rd_lambda: float,
               rng: np.random.Generator | None = None, mode: str = "train") -> RDOutput:
    """Differentiable ``bpp + rd_lambda * mse`` on a batch (B, H, W, 3).

    ``train``: additive uniform noise for the rate of both latents,
    straight-through rounding of ``y - mu`` for the reconstruction, and a
    k-means update of every CAM block. ``eval``: everything rounded, centers
    frozen; the rate then matches the coder's ideal bits up to saturation.
    ``smooth``: noise on both paths with frozen centers, a surrogate that is
    differentiable everywhere (used for gradient checks).
    """
    if mode not in RD_MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    training = mode == "train"
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=model.dtype)
    rng = rng or np.random.default_rng(0)
    y = model.analysis(x, training)
    z = model.hyper_encoder(y)
    z_tilde = quantize(z, None, "round" if mode == "eval" else "noise", rng=rng)
    z_lik = gaussian_likelihood(z_tilde - model.prior.loc, model.prior.scale())
    mu, sigma = model.hyper_decoder(z_tilde, y.shape[1:3])
    if mode == "eval":
        y_hat = quantize(y, mu, "round")
        y_rate = y_hat - mu
    else:
        y_noisy = quantize(y, None, "noise", rng=rng)
        y_rate = y_noisy - mu
        y_hat = quantize(y, mu, "ste") if training else y_noisy
    y_lik = gaussian_likelihood(y_rate, sigma)
    bits = (tsum(log(y_lik)) + tsum(log(z_lik))) * (-1.0 / np.log(2.0))
    b, h, w = x.shape[:3]
    bpp = bits * (1.0 / (b * h * w))
    x_hat = model.synthesis(y_hat, training)
    mse = mse_255(x, x_hat)
    return RDOutput(loss=bpp + mse * rd_lambda, bpp=bpp, mse=mse, x_hat=x_hat)
