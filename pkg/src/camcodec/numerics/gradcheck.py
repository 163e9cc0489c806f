"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor, backward

__all__ = ["GradCheckReport", "grad_check", "grad_check_params", "numeric_grad"]


@dataclass
class GradCheckReport:
    tol: float
    max_rel_err: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.max_rel_err.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.max_rel_err.items())
        return f"grad_check {status} (tol {self.tol:g}): {parts}"


def _scalar(fn, inputs) -> float:
    out = fn(*inputs)
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: function output is not finite")
    return float(np.asarray(out.data, dtype=np.float64).sum())


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], which: int,
                 step: float = 1e-3, indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``inputs[which]``.

    The step for element ``v`` is ``step * max(1, |v|)``. When ``indices`` is
    given only those flat positions are probed and the rest stay zero.
    """
    target = inputs[which]
    base = target.data.astype(np.float64)
    grad = np.zeros(base.size)
    flat_positions = range(base.size) if indices is None else indices
    for pos in flat_positions:
        h = step * max(1.0, abs(base.flat[pos]))
        vals = []
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe.flat[pos] += sign * h
            args = list(inputs)
            args[which] = Tensor(probe, requires_grad=target.requires_grad)
            vals.append(_scalar(fn, args))
        grad[pos] = (vals[0] - vals[1]) / (2 * h)
    return grad.reshape(base.shape)


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-4,
               step: float = 1e-3, names: Sequence[str] | None = None,
               max_probes: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``sum(fn(*inputs))`` with central differences.

    Inputs are promoted to float64. The error for one input is
    ``max|analytic - numeric| / max(max|numeric|, max|analytic|, 1e-12)``, i.e.
    relative to that input's gradient scale. ``max_probes`` limits the number
    of finite-difference probes per input (sampled without replacement).
    """
    inputs = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    out = fn(*inputs)
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: function output is not finite")
    loss = out if out.size == 1 else out.sum()
    grads = backward(loss)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for i, (name, t) in enumerate(zip(names, inputs)):
        analytic = grads.get(t, np.zeros_like(t.data))
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = np.sort(rng.choice(t.size, size=max_probes, replace=False))
        numeric = numeric_grad(fn, inputs, i, step=step, indices=idx)
        if idx is not None:
            a = analytic.reshape(-1)[idx]
            n = numeric.reshape(-1)[idx]
        else:
            a, n = analytic.reshape(-1), numeric.reshape(-1)
        scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0), 1e-12)
        report.max_rel_err[name] = float(np.abs(a - n).max(initial=0.0) / scale)
    return report


def grad_check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], tol: float = 1e-4,
                      step: float = 1e-3, max_probes: int | None = None, seed: int = 0) -> GradCheckReport:
    """Like :func:`grad_check` for tensors a closure reads directly (e.g. model weights).

    Each tensor's data is perturbed in place and restored afterwards; the
    tensors should already be float64 for a meaningful comparison.
    """
    loss = loss_fn()
    if loss.size != 1 or not np.isfinite(loss.data).all():
        raise NumericError("grad_check_params: loss must be a finite scalar")
    grads = backward(loss)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, t in params.items():
        analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
        positions = np.arange(t.size)
        if max_probes is not None and t.size > max_probes:
            positions = np.sort(rng.choice(t.size, size=max_probes, replace=False))
        original = t.data
        numeric = np.zeros(positions.size)
        try:
            for n, pos in enumerate(positions):
                h = step * max(1.0, abs(float(original.flat[pos])))
                vals = []
                for sign in (1.0, -1.0):
                    probe = original.copy()
                    probe.flat[pos] += sign * h
                    t.data = probe
                    vals.append(float(loss_fn().data.sum()))
                numeric[n] = (vals[0] - vals[1]) / (2 * h)
        finally:
            t.data = original
        a = analytic[positions]
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(a).max(initial=0.0), 1e-12)
        report.max_rel_err[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
    return report
