"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, float64) and share no code with
the package beyond plain numpy.
"""
import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def softplus_ref(v):
    return math.log1p(math.exp(v)) if v < 30 else v + math.log1p(math.exp(-v))


def scan_loop(x, delta, a, b, c, skip):
    """Token-by-token selective scan for one sequence.

    x, delta: (N, d); a: (d, ds); b, c: (N, ds); skip: (d,).
    """
    n, d = x.shape
    ds = a.shape[1]
    h = np.zeros((d, ds))
    y = np.zeros((n, d))
    for i in range(n):
        for ch in range(d):
            for s in range(ds):
                da = delta[i, ch] * a[ch, s]
                a_bar = math.exp(da)
                f = math.expm1(da) / a[ch, s] if abs(da) >= 1e-6 else delta[i, ch] * (1 + 0.5 * da)
                h[ch, s] = a_bar * h[ch, s] + f * b[i, s] * x[i, ch]
            y[i, ch] = sum(c[i, s] * h[ch, s] for s in range(ds)) + skip[ch] * x[i, ch]
    return y


def selective_loop(x, a_log, w_delta, b_delta, w_b, w_c, skip, prompts=None):
    """Selective scan with per-token projections computed row by row."""
    n, d = x.shape
    delta = np.array([[softplus_ref(float(x[i] @ w_delta[:, j] + b_delta[j])) for j in range(d)] for i in range(n)])
    b = x @ w_b
    c = x @ w_c
    if prompts is not None:
        c = c + prompts
    return scan_loop(x, delta, -np.exp(a_log), b, c, skip)


def stable_counting_sort(g, k):
    buckets = [[] for _ in range(k)]
    for i, v in enumerate(g):
        buckets[v].append(i)
    return np.array([i for bucket in buckets for i in bucket], dtype=np.int64)


def argmax_cosine(tokens, centers, eps=1e-8):
    g = np.zeros(len(tokens), dtype=np.int64)
    for i, x in enumerate(tokens):
        best, best_j = -np.inf, 0
        for j, c in enumerate(centers):
            s = float(x @ c) / (max(np.linalg.norm(x) * np.linalg.norm(c), 0.0) + eps)
            if s > best:
                best, best_j = s, j
        g[i] = best_j
    return g


def normalized_sums(tokens, g, centers):
    out = centers.copy()
    for j in range(len(centers)):
        members = [tokens[i] for i in range(len(tokens)) if g[i] == j]
        if not members:
            continue
        s = np.sum(members, axis=0)
        if np.linalg.norm(s) > 0:
            out[j] = s / np.linalg.norm(s)
    return out


def conv2d_loops(x, w, bias=None, stride=1):
    """Zero-padded 'same'-style convolution; x (H, W, Cin), w (k, k, Cin, Cout)."""
    k = w.shape[0]
    p = k // 2
    h, wd, _ = x.shape
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    out = np.zeros((ho, wo, w.shape[3]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[i * stride: i * stride + k, j * stride: j * stride + k, :]
            out[i, j] = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2]))
    if bias is not None:
        out += bias
    return out


def depthwise_loops(x, w, bias):
    h, wd, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for ch in range(c):
                out[i, j, ch] = (xp[i: i + 3, j: j + 3, ch] * w[:, :, ch]).sum() + bias[ch]
    return out


def gelu_tanh(v):
    return 0.5 * v * (1 + np.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3)))


def layer_norm_rows(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def window_attention_loops(x, heads, window, g, b, w_qkv, b_qkv, w_proj, b_proj):
    """x (H, W, C) with H, W multiples of the window."""
    h, wd, c = x.shape
    hd = c // heads
    u = layer_norm_rows(x, g, b)
    out = np.zeros_like(x, dtype=np.float64)
    for wi in range(0, h, window):
        for wj in range(0, wd, window):
            toks = u[wi: wi + window, wj: wj + window].reshape(-1, c)
            qkv = toks @ w_qkv + b_qkv
            q, k, v = qkv[:, :c], qkv[:, c: 2 * c], qkv[:, 2 * c:]
            o = np.zeros_like(toks)
            for hh in range(heads):
                sl = slice(hh * hd, (hh + 1) * hd)
                logits = q[:, sl] @ k[:, sl].T / math.sqrt(hd)
                logits -= logits.max(axis=1, keepdims=True)
                p = np.exp(logits)
                p /= p.sum(axis=1, keepdims=True)
                o[:, sl] = p @ v[:, sl]
            out[wi: wi + window, wj: wj + window] = (o @ w_proj + b_proj).reshape(window, window, c)
    return x + out


def normal_cdf(v):
    return 0.5 * math.erfc(-v / math.sqrt(2))


def normal_bin_mass(lo, hi):
    """Phi(hi) - Phi(lo), reflected into the lower tail to avoid cancellation."""
    if lo > 0:
        lo, hi = -hi, -lo
    return normal_cdf(hi) - normal_cdf(lo)


def bd_rate_reference(rate_a, psnr_a, rate_b, psnr_b):
    """Bjontegaard delta rate with numpy.polyfit/polyint (the classic script)."""
    pa = np.polyfit(psnr_a, np.log(rate_a), 3)
    pb = np.polyfit(psnr_b, np.log(rate_b), 3)
    lo = max(min(psnr_a), min(psnr_b))
    hi = min(max(psnr_a), max(psnr_b))
    ia, ib = np.polyint(pa), np.polyint(pb)
    avg = ((np.polyval(ib, hi) - np.polyval(ib, lo)) - (np.polyval(ia, hi) - np.polyval(ia, lo))) / (hi - lo)
    return (math.exp(avg) - 1) * 100
