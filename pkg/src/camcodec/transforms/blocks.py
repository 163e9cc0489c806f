"""Building blocks of the analysis and synthesis transforms.

Feature maps are ``(B, H, W, C)`` tensors; the token view of a map is its
raster flattening ``(B, H*W, C)``.
"""
from __future__ import annotations

import numpy as np

from .. import clustering, sequencing
from ..numerics import (
    Tensor,
    conv2d,
    conv_transpose2d,
    depthwise_conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    pad2d,
    silu,
    softmax,
    transpose,
)
from ..ssm import PromptDictionary, SsmBlockParams, prompt_lookup, prompted_scan
from .config import ConfigurationError


class Module:
    """Holds named parameter tensors and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def register(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {f"{prefix}{k}": v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> np.ndarray:
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv(Module):
    """Stride-2 5x5 downsampling convolution (or any stride/kernel)."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32, kernel: int = 5, stride: int = 2):
        super().__init__()
        self.stride = stride
        self.weight = self.register("weight", _uniform(rng, (kernel, kernel, cin, cout), kernel * kernel * cin, dtype))
        self.bias = self.register("bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class Deconv(Module):
    """Stride-2 5x5 transposed convolution doubling the spatial extent."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32, kernel: int = 5, stride: int = 2):
        super().__init__()
        self.stride = stride
        fan = kernel * kernel * cin // (stride * stride)
        self.weight = self.register("weight", _uniform(rng, (kernel, kernel, cin, cout), fan, dtype))
        self.bias = self.register("bias", np.zeros(cout, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


def _partition(t: Tensor, w: int) -> Tensor:
    b, h, wd, c = t.shape
    t = t.reshape(b, h // w, w, wd // w, w, c)
    return transpose(t, (0, 1, 3, 2, 4, 5)).reshape(b * (h // w) * (wd // w), w * w, c)


def _merge(t: Tensor, b: int, h: int, wd: int, w: int) -> Tensor:
    c = t.shape[-1]
    t = t.reshape(b, h // w, wd // w, w, w, c)
    return transpose(t, (0, 1, 3, 2, 4, 5)).reshape(b, h, wd, c)


class WindowAttention(Module):
    """Pre-norm multi-head self-attention inside non-overlapping windows, plus residual.

    Maps whose extent is not a multiple of the window are zero-padded at the
    bottom/right; padded positions are masked out as keys and cropped away.
    """

    def __init__(self, dim: int, heads: int, window: int, rng, dtype=np.float32):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ConfigurationError(f"{dim} channels cannot be split into {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.norm_g = self.register("norm_g", np.ones(dim, dtype=dtype))
        self.norm_b = self.register("norm_b", np.zeros(dim, dtype=dtype))
        self.w_qkv = self.register("w_qkv", _uniform(rng, (dim, 3 * dim), dim, dtype))
        self.b_qkv = self.register("b_qkv", np.zeros(3 * dim, dtype=dtype))
        self.w_proj = self.register("w_proj", _uniform(rng, (dim, dim), dim, dtype))
        self.b_proj = self.register("b_proj", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        win = self.window
        ph, pw = (-h) % win, (-w) % win
        u = pad2d(layer_norm(x, self.norm_g, self.norm_b), ph, pw)
        hp, wp = h + ph, w + pw
        qkv = _partition(linear(u, self.w_qkv, self.b_qkv), win)
        nw, t = qkv.shape[0], qkv.shape[1]
        hd = c // self.heads
        qkv = transpose(qkv.reshape(nw, t, 3, self.heads, hd), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        if ph or pw:
            valid = np.zeros((1, hp, wp, 1), dtype=x.dtype)
            valid[:, :h, :w] = 1
            valid = np.broadcast_to(valid, (b, hp, wp, 1))
            vw = _partition(Tensor(np.ascontiguousarray(valid)), win).data[..., 0]  # (nw, t)
            mask = np.where(vw[:, None, None, :] > 0, 0.0, -1e9).astype(x.dtype)
            logits = logits + Tensor(np.ascontiguousarray(np.broadcast_to(mask, logits.shape)))
        attn = softmax(logits, axis=-1)
        o = transpose(matmul(attn, v), (0, 2, 1, 3)).reshape(nw, t, c)
        o = _merge(o, b, hp, wp, win)
        if ph or pw:
            o = o[:, :h, :w, :]
        return x + linear(o, self.w_proj, self.b_proj)


class ConvFFN(Module):
    """Pointwise expansion, depthwise 3x3, GELU, pointwise projection, residual."""

    def __init__(self, dim: int, rng, dtype=np.float32, ratio: int = 2):
        super().__init__()
        hidden = ratio * dim
        self.w1 = self.register("w1", _uniform(rng, (dim, hidden), dim, dtype))
        self.b1 = self.register("b1", np.zeros(hidden, dtype=dtype))
        self.dw = self.register("dw", _uniform(rng, (3, 3, hidden), 9, dtype))
        self.dw_b = self.register("dw_b", np.zeros(hidden, dtype=dtype))
        self.w2 = self.register("w2", _uniform(rng, (hidden, dim), hidden, dtype))
        self.b2 = self.register("b2", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        hdn = linear(x, self.w1, self.b1)
        hdn = gelu(depthwise_conv2d(hdn, self.dw, self.dw_b))
        return x + linear(hdn, self.w2, self.b2)


class CamBlock(Module):
    """Content-adaptive selective-scan block.

    Tokens are layer-normalized and clustered by cosine similarity; the scan
    runs over the cluster-contiguous reordering with the cluster's prompt added
    to the read-out, and the result is put back in raster order, gated, projected
    and added to the input.
    """

    def __init__(self, dim: int, d_state: int, k: int, rng, dtype=np.float32,
                 ema_decay: float = 0.99, iters: int = 5):
        super().__init__()
        self.k, self.ema_decay, self.iters = k, ema_decay, iters
        self.norm_g = self.register("norm_g", np.ones(dim, dtype=dtype))
        self.norm_b = self.register("norm_b", np.zeros(dim, dtype=dtype))
        ssm = SsmBlockParams.init(dim, d_state, rng, dtype=dtype)
        for name, t in ssm.named().items():
            t.name = name
            self._params[name] = t
        self.ssm = ssm
        self.dictionary = PromptDictionary(self.register("prompt_dict", np.zeros((k, d_state), dtype=dtype)))
        self.w_gate = self.register("w_gate", _uniform(rng, (dim, dim), dim, dtype))
        self.b_gate = self.register("b_gate", np.zeros(dim, dtype=dtype))
        self.w_out = self.register("w_out", _uniform(rng, (dim, dim), dim, dtype))
        self.b_out = self.register("b_out", np.zeros(dim, dtype=dtype))
        self.cluster: clustering.ClusterModel | None = None
        self.last_assignments: np.ndarray | None = None

    def cluster_tokens(self, tokens: np.ndarray, training: bool) -> np.ndarray:
        """Assignments for a (B, N, d) batch; centers are shared across the batch."""
        b, n, d = tokens.shape
        flat = tokens.reshape(b * n, d)
        if self.cluster is None:
            self.cluster = clustering.init_centers(flat, self.k, self.ema_decay, self.iters)
        if training:
            g, self.cluster = clustering.kmeans_train_step(flat, self.cluster)
        else:
            g = clustering.assign_inference(flat, self.cluster)
        return g.reshape(b, n)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        b, h, w, c = x.shape
        u = layer_norm(x.reshape(b, h * w, c), self.norm_g, self.norm_b)
        g = self.cluster_tokens(u.data, training)
        self.last_assignments = g.reshape(b, h, w)
        perm = sequencing.build_permutation(g, self.k)
        g_sorted = np.take_along_axis(g, perm.forward, axis=1)
        prompts = prompt_lookup(g_sorted, self.dictionary)
        y = prompted_scan(sequencing.apply(perm, u), self.ssm, prompts)
        y = sequencing.restore(perm, y)
        y = y * silu(linear(u, self.w_gate, self.b_gate))
        return x + linear(y, self.w_out, self.b_out).reshape(b, h, w, c)


class TransformBlock(Module):
    """Window attention, an optional CAM block, then the Conv-FFN."""

    def __init__(self, dim: int, heads: int, window: int, rng, dtype=np.float32,
                 cam: dict | None = None):
        super().__init__()
        self.attn = self.add("attn", WindowAttention(dim, heads, window, rng, dtype))
        self.cam = self.add("cam", CamBlock(dim, rng=rng, dtype=dtype, **cam)) if cam else None
        self.ffn = self.add("ffn", ConvFFN(dim, rng, dtype))

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        x = self.attn(x)
        if self.cam is not None:
            x = self.cam(x, training)
        return self.ffn(x)
