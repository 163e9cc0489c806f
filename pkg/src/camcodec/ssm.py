"""Discrete selective state-space scan with prompt-augmented read-out.

For every token ``i`` and channel ``c`` the hidden state ``h[i, c]`` (width
``d_state``) evolves as::

    h[i, c] = a_bar[i, c] * h[i-1, c] + b_bar[i, c] * x[i, c]
    y[i, c] = (C[i] + P[i]) . h[i, c] + skip[c] * x[i, c]

with zero-order-hold discretization of a diagonal negative state matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    ContractError,
    NumericError,
    ShapeError,
    Tensor,
    exp,
    linear,
    make_op,
    neg,
    softplus,
    take,
)

TAYLOR_THRESHOLD = 1e-6


def _zoh(delta: np.ndarray, a: np.ndarray):
    """Return ``(a_bar, f)`` with ``b_bar = f * b``.

    ``f = (exp(delta*a) - 1) / a``; below the threshold on ``|delta*a|`` the
    removable singularity is replaced by ``delta * (1 + delta*a/2)``.
    """
    da = delta * a
    a_bar = np.exp(da)
    small = np.abs(da) < TAYLOR_THRESHOLD
    safe_a = np.where(small, 1.0, a)
    f = np.where(small, delta * (1 + 0.5 * da), np.expm1(da) / safe_a)
    return a_bar, f, small


def discretize(delta, a, b):
    """Zero-order-hold ``(a_bar, b_bar)`` for scalar or elementwise-diagonal systems."""
    delta = np.asarray(delta, dtype=np.float64)
    if (delta <= 0).any():
        raise ContractError("discretize: delta must be positive")
    a_bar, f, _ = _zoh(delta, np.asarray(a, dtype=np.float64))
    b_bar = f * np.asarray(b, dtype=np.float64)
    if a_bar.ndim == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def _as_batched(t: Tensor, n_dims: int):
    return t if t.ndim == n_dims else t.reshape(1, *t.shape)


def scan(x: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor, skip: Tensor) -> Tensor:
    """Fused causal scan over the token axis.

    Shapes: ``x`` and ``delta`` (B, N, d); ``a`` (d, d_s); ``b`` and ``c``
    (B, N, d_s); ``skip`` (d,). The batch axis is optional. Vectorized over
    batch, channels and state; sequential over tokens.
    """
    squeeze = x.ndim == 2
    xs, ds, bs, cs = (_as_batched(t, 3) for t in (x, delta, b, c))
    bsz, n, d = xs.shape
    d_state = a.shape[1]
    if ds.shape != xs.shape or a.shape != (d, d_state) or skip.shape != (d,):
        raise ShapeError(f"scan: inconsistent shapes x{xs.shape} delta{ds.shape} a{a.shape} skip{skip.shape}")
    if bs.shape != (bsz, n, d_state) or cs.shape != (bsz, n, d_state):
        raise ShapeError(f"scan: b{bs.shape} / c{cs.shape} must be {(bsz, n, d_state)}")
    if (ds.data <= 0).any():
        raise ContractError("scan: delta must be positive")

    xd, dd, ad, bd, cd = xs.data, ds.data, a.data, bs.data, cs.data
    dt = np.result_type(xd, dd, ad, bd, cd)
    a_bar, f, small = _zoh(dd[..., None], ad)  # (B, N, d, d_s)
    a_bar = a_bar.astype(dt, copy=False)
    f = f.astype(dt, copy=False)
    b_bar = f * bd[:, :, None, :]
    with np.errstate(over="ignore", invalid="ignore"):  # reported below with the token index
        u = b_bar * xd[..., None]
        h = np.empty_like(u)
        state = np.zeros((bsz, d, d_state), dtype=dt)
        for i in range(n):
            state = a_bar[:, i] * state + u[:, i]
            h[:, i] = state
    if not np.isfinite(h).all():
        bad = int(np.argwhere(~np.isfinite(h))[0][1])
        raise NumericError(f"scan: non-finite hidden state at token {bad}")
    y = np.matmul(h, cd[..., None])[..., 0] + skip.data * xd

    def _bw(gy):
        gy = gy.reshape(bsz, n, d)
        gc = np.matmul(gy[:, :, None, :], h)[:, :, 0, :]
        gskip = (gy * xd).sum(axis=(0, 1))
        gx = gy * skip.data
        gh_direct = gy[..., None] * cd[:, :, None, :]
        gh = np.empty_like(h)
        acc = np.zeros((bsz, d, d_state), dtype=h.dtype)
        for i in range(n - 1, -1, -1):
            if i + 1 < n:
                acc = gh_direct[:, i] + a_bar[:, i + 1] * acc
            else:
                acc = gh_direct[:, i]
            gh[:, i] = acc
        h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
        g_abar = gh * h_prev
        gx = gx + (gh * b_bar).sum(axis=-1)
        g_bbar = gh * xd[..., None]
        gb = (g_bbar * f).sum(axis=2)
        g_f = g_bbar * bd[:, :, None, :]
        dl = dd[..., None]
        df_ddelta = np.where(small, 1 + dl * ad, a_bar)
        safe_a = np.where(small, 1.0, ad)
        df_da = np.where(small, 0.5 * dl * dl, (dl * a_bar - f) / safe_a)
        g_da = g_abar * a_bar
        gdelta = (g_da * ad + g_f * df_ddelta).sum(axis=-1)
        ga = (g_da * dl + g_f * df_da).sum(axis=(0, 1))
        out = [gx, gdelta, ga, gb, gc, gskip]
        if squeeze:
            for k in (0, 1, 3, 4):
                out[k] = out[k][0]
        return tuple(o.astype(dt, copy=False) for o in out)

    if squeeze:
        y = y[0]
    return make_op(y, (x, delta, a, b, c, skip), _bw, "scan")


@dataclass
class SsmBlockParams:
    """Selective-scan parameters for ``d`` channels and state width ``d_state``.

    ``a_log`` parameterizes ``A = -exp(a_log)``. Per token, ``delta =
    softplus(x @ w_delta + b_delta)``, ``B = x @ w_b`` and ``C = x @ w_c``.
    """

    a_log: Tensor
    w_delta: Tensor
    b_delta: Tensor
    w_b: Tensor
    w_c: Tensor
    skip: Tensor

    @property
    def d(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {"a_log": self.a_log, "w_delta": self.w_delta, "b_delta": self.b_delta,
                "w_b": self.w_b, "w_c": self.w_c, "skip": self.skip}

    @classmethod
    def init(cls, d: int, d_state: int, rng: np.random.Generator, dtype=np.float32,
             delta_init: float = 0.1) -> "SsmBlockParams":
        a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d, 1)))
        bound = 1.0 / np.sqrt(d)

        def w(shape):
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

        b_delta = np.full(d, np.log(np.expm1(delta_init)))
        return cls(
            a_log=Tensor(a_log.astype(dtype), requires_grad=True),
            w_delta=w((d, d)),
            b_delta=Tensor(b_delta.astype(dtype), requires_grad=True),
            w_b=w((d, d_state)),
            w_c=w((d, d_state)),
            skip=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        )


@dataclass
class PromptDictionary:
    table: Tensor  # (K, d_state)

    @property
    def k(self) -> int:
        return self.table.shape[0]


def selective_params(x: Tensor, params: SsmBlockParams):
    """Per-token ``(delta, B, C)`` and the state matrix ``A`` for input ``x``."""
    delta = softplus(linear(x, params.w_delta, params.b_delta))
    b = linear(x, params.w_b)
    c = linear(x, params.w_c)
    a = neg(exp(params.a_log))
    return delta, a, b, c


def selective_scan(x: Tensor, params: SsmBlockParams) -> Tensor:
    delta, a, b, c = selective_params(x, params)
    return scan(x, delta, a, b, c, params.skip)


def prompt_lookup(g: np.ndarray, dictionary: PromptDictionary) -> Tensor:
    """Row ``g[i]`` of the dictionary for every token (one-hot times table)."""
    g = np.asarray(g)
    if g.size and (g.min() < 0 or g.max() >= dictionary.k):
        raise ContractError(f"prompt_lookup: cluster id outside [0, {dictionary.k})")
    return take(dictionary.table, g, axis=0)


def prompted_scan(x: Tensor, params: SsmBlockParams, prompts: Tensor) -> Tensor:
    delta, a, b, c = selective_params(x, params)
    if prompts.shape != c.shape:
        raise ShapeError(f"prompts {prompts.shape} must match read-out {c.shape}")
    return scan(x, delta, a, b, c + prompts, params.skip)


@dataclass
class FixedSsm:
    """Input-independent system: the same ``delta``, ``B`` and ``C`` for every token."""

    a: np.ndarray      # (d, d_s), negative
    delta: np.ndarray  # (d,)
    b: np.ndarray      # (d_s,)
    c: np.ndarray      # (d_s,)
    skip: np.ndarray   # (d,)

    def run(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        t = lambda v: Tensor(np.asarray(v, dtype=np.float64))  # noqa: E731
        out = scan(t(x), t(np.broadcast_to(self.delta, x.shape)), t(self.a),
                   t(np.broadcast_to(self.b, (n, self.b.size))),
                   t(np.broadcast_to(self.c, (n, self.c.size))), t(self.skip))
        return out.data


def impulse_response(system: FixedSsm, i: int, j: int, n: int | None = None) -> float:
    """``||y_j||`` when a unit impulse (all channels) is applied at token ``i``."""
    if j < i:
        raise ContractError(f"causality: output {j} cannot depend on later input {i}")
    n = max(n or 0, j + 1)
    x = np.zeros((n, system.a.shape[0]))
    x[i] = 1.0
    return float(np.linalg.norm(system.run(x)[j]))
