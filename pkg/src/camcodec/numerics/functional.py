"""Differentiable elementwise, normalization and convolution ops.

Images and feature maps are channels-last: ``(batch, height, width, channels)``.
Convolution weights are ``(kh, kw, c_in, c_out)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, ShapeError, Tensor, make_op

__all__ = [
    "exp",
    "log",
    "square",
    "softplus",
    "sigmoid",
    "silu",
    "gelu",
    "relu",
    "lower_bound",
    "clip",
    "linear",
    "layer_norm",
    "softmax",
    "concat",
    "pad2d",
    "take",
    "permute_rows",
    "conv2d",
    "conv_transpose2d",
    "depthwise_conv2d",
]


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise ContractError("log of a non-positive value")
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def square(x: Tensor) -> Tensor:
    return make_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def softplus(x: Tensor) -> Tensor:
    """``log(1 + exp(x))`` without overflow for large ``|x|``."""
    d = x.data
    out = np.logaddexp(0, d).astype(d.dtype, copy=False)
    return make_op(out, (x,), lambda g: (g * _sigmoid(d),), "softplus")


def _sigmoid(d: np.ndarray) -> np.ndarray:
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s
    return make_op(out, (x,), lambda g: (g * (s + out * (1 - s)),), "silu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    out = 0.5 * d * (1 + t)

    def _bw(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * d ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * d * (1 - t * t) * dinner),)

    return make_op(out, (x,), _bw, "gelu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def lower_bound(x: Tensor, bound: float) -> Tensor:
    """``max(x, bound)``; gradient passes only where ``x`` is above the bound."""
    mask = x.data >= bound
    out = np.where(mask, x.data, np.asarray(bound, dtype=x.dtype))
    return make_op(out, (x,), lambda g: (g * mask,), "lower_bound")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data >= lo) & (x.data <= hi)
    return make_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,), "clip")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis, fused into one node."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))

    def _bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, _bw, "linear")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    n = d.shape[-1]

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma is not None else None
        gbeta = g.sum(axis=lead) if beta is not None else None
        gh = g * gamma.data if gamma is not None else g
        gx = inv / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
        return gx, ggamma, gbeta

    parents = tuple(p for p in (x, gamma, beta) if p is not None)
    if gamma is None and beta is not None:
        raise ContractError("layer_norm: beta without gamma is not supported")

    def _bw_select(g):
        gx, ggamma, gbeta = _bw(g)
        return tuple(v for v, p in zip((gx, ggamma, gbeta), (x, gamma, beta)) if p is not None)

    return make_op(out.astype(d.dtype, copy=False), parents, _bw_select, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    z = d - d.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_op(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def _bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_op(out, tuple(xs), _bw, "concat")


def pad2d(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the bottom/right of a (B, H, W, C) map."""
    if pad_h == 0 and pad_w == 0:
        return x
    h, w = x.shape[1], x.shape[2]
    out = np.pad(x.data, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
    return make_op(out, (x,), lambda g: (g[:, :h, :w, :].copy(),), "pad2d")


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[axis]):
        raise ContractError(f"take: index out of range for axis of length {x.shape[axis]}")
    out = np.take(x.data, indices, axis=axis)

    def _bw(g):
        full = np.zeros_like(x.data)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        fm = np.moveaxis(full, axis, 0)
        np.add.at(fm, indices, gm)
        return (full,)

    return make_op(out, (x,), _bw, "take")


def permute_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``out[b, i] = x[b, index[b, i]]`` for a batch of bijections on the token axis.

    ``x`` is (B, N, d) and ``index`` is (B, N). The backward pass is the exact
    inverse scatter, so no accumulation is needed.
    """
    if x.ndim != 3 or index.shape != x.shape[:2]:
        raise ShapeError(f"permute_rows: index {index.shape} does not match tokens {x.shape}")
    out = np.take_along_axis(x.data, index[:, :, None], axis=1)

    def _bw(g):
        full = np.empty_like(g)
        np.put_along_axis(full, index[:, :, None], g, axis=1)
        return (full,)

    return make_op(out, (x,), _bw, "permute_rows")


# ---------------------------------------------------------------------------
# convolutions


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B, Hp-kh+1, Wp-kw+1, C, kh, kw)
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * xp.shape[3])


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """Zero-padded 2-d convolution; ``padding`` defaults to ``k // 2``."""
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, weight expects {cin}")
    p = kh // 2 if padding is None else padding
    b, h, w, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))
    ho = (h + 2 * p - kh) // stride + 1
    wo = (w + 2 * p - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(-1, cout)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, ho, wo, cout)

    def _bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        gcols = (g2 @ wmat.T).reshape(b, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i: i + stride * (ho - 1) + 1: stride, j: j + stride * (wo - 1) + 1: stride] += gcols[:, :, :, i, j]
        gx = gxp[:, p: p + h, p: p + w]
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, _bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2,
                     padding: int | None = None, output_padding: int | None = None) -> Tensor:
    """Transposed convolution; defaults give an output exactly ``stride`` times larger."""
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv_transpose2d: input has {x.shape[3]} channels, weight expects {cin}")
    p = kh // 2 if padding is None else padding
    op = stride - 1 if output_padding is None else output_padding
    b, h, w, _ = x.shape
    hf = (h - 1) * stride + kh
    wf = (w - 1) * stride + kw
    ho = (h - 1) * stride - 2 * p + kh + op
    wo = (w - 1) * stride - 2 * p + kw + op
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    xflat = x.data.reshape(-1, cin)
    cols = (xflat @ wmat).reshape(b, h, w, kh, kw, cout)
    full = np.zeros((b, max(hf, p + ho), max(wf, p + wo), cout), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i: i + stride * (h - 1) + 1: stride, j: j + stride * (w - 1) + 1: stride] += cols[:, :, :, i, j]
    out = full[:, p: p + ho, p: p + wo].copy()
    if bias is not None:
        out += bias.data

    def _bw(g):
        gfull = np.zeros_like(full)
        gfull[:, p: p + ho, p: p + wo] = g
        gcols = np.empty((b, h, w, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, :, i, j] = gfull[:, i: i + stride * (h - 1) + 1: stride, j: j + stride * (w - 1) + 1: stride]
        gcols = gcols.reshape(-1, kh * kw * cout)
        gx = (gcols @ wmat.T).reshape(x.shape)
        gw = (xflat.T @ gcols).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        gb = g.reshape(-1, cout).sum(axis=0) if bias is not None else None
        return (gx, np.ascontiguousarray(gw)) if bias is None else (gx, np.ascontiguousarray(gw), gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, _bw, "conv_transpose2d")


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 'same' convolution; ``weight`` is (kh, kw, C)."""
    kh, kw, c = weight.shape
    if x.shape[3] != c:
        raise ShapeError(f"depthwise_conv2d: {x.shape[3]} channels vs weight {c}")
    ph, pw = kh // 2, kw // 2
    b, h, w, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros_like(x.data)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i: i + h, j: j + w] * weight.data[i, j]
    if bias is not None:
        out += bias.data

    def _bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i: i + h, j: j + w] += g * weight.data[i, j]
                gw[i, j] = (g * xp[:, i: i + h, j: j + w]).sum(axis=(0, 1, 2))
        gx = gxp[:, ph: ph + h, pw: pw + w]
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, _bw, "depthwise_conv2d")
