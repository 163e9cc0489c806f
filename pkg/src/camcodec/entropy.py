"""Quantization, discretized Gaussian likelihoods and rate accounting.

Residual symbols are integers in ``[SYMBOL_MIN, SYMBOL_MAX]``. The probability
of the two extreme symbols absorbs the Gaussian tails, so every coding pmf
sums to one over the clamped range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .numerics import (
    ConfigurationError,
    ContractError,
    NumericError,
    Tensor,
    lower_bound,
    make_op,
    softplus,
)
from .numerics.tensor import _check_broadcast, _unbroadcast

SYMBOL_MIN = -127
SYMBOL_MAX = 127
NUM_SYMBOLS = SYMBOL_MAX - SYMBOL_MIN + 1
SIGMA_FLOOR = 0.11
LIKELIHOOD_FLOOR = 1e-9
LAMBDA_PRESETS = (0.0017, 0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.050)
QUANT_MODES = ("round", "noise", "ste")


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor


@dataclass
class FactorizedPrior:
    """Per-channel discretized Gaussian for the side information."""

    loc: Tensor        # (C,)
    raw_scale: Tensor  # (C,); scale = max(softplus(raw_scale), SIGMA_FLOOR)

    @classmethod
    def init(cls, channels: int, dtype=np.float32) -> "FactorizedPrior":
        raw = np.full(channels, np.log(np.expm1(1.0)), dtype=dtype)
        return cls(loc=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
                   raw_scale=Tensor(raw, requires_grad=True))

    def scale(self) -> Tensor:
        return lower_bound(softplus(self.raw_scale), SIGMA_FLOOR)


@dataclass
class RDPoint:
    bpp: float
    psnr_db: float
    rate_bits: float
    distortion: float
    rd_lambda: float = 0.0


# ---------------------------------------------------------------------------
# quantization


def _ste_round(x: Tensor) -> Tensor:
    return make_op(np.rint(x.data), (x,), lambda g: (g,), "ste_round")


def quantize(y: Tensor, mu: Tensor | None, mode: str, noise: np.ndarray | None = None,
             rng: np.random.Generator | None = None) -> Tensor:
    """``round(y - mu) + mu``, its additive-noise surrogate, or the straight-through variant.

    In ``noise`` mode the offset is ``U(-0.5, 0.5)``; pass ``noise`` to fix it.
    """
    if mode not in QUANT_MODES:
        raise ConfigurationError(f"unknown quantization mode {mode!r}")
    if mu is not None and mu.shape != y.shape:
        raise ContractError(f"quantize: mu {mu.shape} vs y {y.shape}")
    if mode == "noise":
        if noise is None:
            rng = rng or np.random.default_rng()
            noise = rng.uniform(-0.5, 0.5, size=y.shape)
        return y + Tensor(np.asarray(noise, dtype=y.dtype))
    if mode == "round":
        centre = mu.data if mu is not None else 0
        return Tensor(np.rint(y.data - centre) + centre, dtype=y.dtype)
    residual = y - mu if mu is not None else y
    return _ste_round(residual) + mu if mu is not None else _ste_round(residual)


def quantize_symbols(y: np.ndarray, mu: np.ndarray | float = 0.0):
    """Integer residuals clamped to the coding range, plus how many were saturated."""
    r = np.rint(np.asarray(y, dtype=np.float64) - mu)
    saturated = int(((r < SYMBOL_MIN) | (r > SYMBOL_MAX)).sum())
    r = np.clip(r, SYMBOL_MIN, SYMBOL_MAX).astype(np.int64)
    return r, saturated


# ---------------------------------------------------------------------------
# likelihoods


def gaussian_likelihood(values: Tensor, sigma: Tensor) -> Tensor:
    """Mass of ``N(0, sigma)`` on ``[v - 0.5, v + 0.5]``, floored at 1e-9.

    Evaluated on ``|v|`` so the upper tail never suffers cancellation.
    """
    _check_broadcast(values.data, sigma.data, "gaussian_likelihood")
    v = np.abs(values.data.astype(np.float64))
    s = np.broadcast_to(sigma.data.astype(np.float64), v.shape)
    upper = (0.5 - v) / s
    lower = (-0.5 - v) / s
    p = ndtr(upper) - ndtr(lower)
    keep = p >= LIKELIHOOD_FLOOR
    out = np.where(keep, p, LIKELIHOOD_FLOOR).astype(values.dtype)
    sign = np.sign(values.data)

    def _bw(g):
        pdf_u = np.exp(-0.5 * upper ** 2) / np.sqrt(2 * np.pi)
        pdf_l = np.exp(-0.5 * lower ** 2) / np.sqrt(2 * np.pi)
        g = g * keep
        dv = -(pdf_u - pdf_l) / s * sign
        ds = -(pdf_u * upper - pdf_l * lower) / s
        return (g * dv).astype(values.dtype), _unbroadcast(g * ds, sigma.shape).astype(sigma.dtype)

    return make_op(out, (values, sigma), _bw, "gaussian_likelihood")


def _log_bin_mass(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """``log(Phi(hi) - Phi(lo))`` for standardized edges, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    lb = log_ndtr(b)
    la = log_ndtr(a)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def log_pmf(symbols: np.ndarray, sigma: np.ndarray, loc: np.ndarray | float = 0.0) -> np.ndarray:
    """Natural-log probability of integer symbols under the tail-folded
    discretized Gaussian ``N(loc, sigma)`` on ``[SYMBOL_MIN, SYMBOL_MAX]``."""
    r = np.asarray(symbols, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    if (s < SIGMA_FLOOR - 1e-6).any():
        raise ContractError("sigma below the floor")
    lo = np.where(r <= SYMBOL_MIN, -np.inf, (r - loc - 0.5) / s)
    hi = np.where(r >= SYMBOL_MAX, np.inf, (r - loc + 0.5) / s)
    return _log_bin_mass(lo, hi)


def gaussian_pmf(r, sigma, loc=0.0):
    """Probability of residual symbol ``r`` (see :func:`log_pmf`)."""
    return np.exp(log_pmf(r, sigma, loc))


def pmf_table(sigma: np.ndarray, loc: np.ndarray | float = 0.0) -> np.ndarray:
    """(M, NUM_SYMBOLS) probability rows for M elements."""
    s = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    m = np.broadcast_to(np.asarray(loc, dtype=np.float64).reshape(-1, 1), s.shape)
    r = np.arange(SYMBOL_MIN, SYMBOL_MAX + 1, dtype=np.float64)[None, :]
    return np.exp(log_pmf(r, s, m))


def rate_estimate(log2_probs: np.ndarray) -> float:
    """Ideal code length in bits, ``sum(-log2 p)``."""
    lp = np.asarray(log2_probs, dtype=np.float64)
    if np.isneginf(lp).any() or np.isnan(lp).any():
        raise NumericError("rate_estimate: a coded symbol has zero probability")
    return float(-lp.sum())


def symbol_bits(symbols: np.ndarray, sigma: np.ndarray, loc: np.ndarray | float = 0.0) -> float:
    return rate_estimate(log_pmf(symbols, sigma, loc) / np.log(2.0))


def mse_255(x, x_hat):
    """Mean squared error on the 8-bit scale for images stored in [0, 1]."""
    if isinstance(x, Tensor) or isinstance(x_hat, Tensor):
        diff = (x_hat - x) * 255.0
        return (diff * diff).mean()
    d = (np.asarray(x_hat, dtype=np.float64) - np.asarray(x, dtype=np.float64)) * 255.0
    return float((d * d).mean())


def rd_loss(rate_bits, distortion_mse, rd_lambda: float, num_pixels: int):
    """``bpp + rd_lambda * mse``; works on floats and on tape tensors."""
    if num_pixels <= 0:
        raise ContractError("num_pixels must be positive")
    return rate_bits * (1.0 / num_pixels) + distortion_mse * rd_lambda
