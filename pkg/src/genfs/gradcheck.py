"""Finite-difference oracles for the autodiff engine.

Analytic gradients come from a float32 forward/backward pass; the reference
is a float64 central difference taken at the same (float32-rounded) point.
Errors are relative in the L2 norm so that near-zero components do not blow
the ratio up.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def _scalarize(out: Tensor, proj: np.ndarray | None) -> Tensor:
    if out.data.size == 1:
        return out.reshape(()) if out.ndim else out
    return (out * Tensor(proj, dtype=out.data.dtype)).sum()


def check_op(fn: Callable[..., Tensor], *arrays, eps: float = 1e-3, seed: int = 0) -> float:
    """Largest relative gradient error of ``fn`` over its inputs.

    Non-scalar outputs are reduced with a fixed random projection, which
    checks the full vector-Jacobian product rather than one component.
    """
    arrays = [np.asarray(a, dtype=np.float32).astype(np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    proj = None
    if probe.data.size != 1:
        proj = np.random.default_rng(seed).standard_normal(probe.shape)

    leaves = [Tensor(a.astype(np.float32), requires_grad=True) for a in arrays]
    nx.backward(_scalarize(fn(*leaves), proj))

    def f(vals) -> float:
        with nx.default_dtype(np.float64), nx.no_grad():
            return float(_scalarize(fn(*[Tensor(v) for v in vals]), proj).data)

    worst = 0.0
    for i, a in enumerate(arrays):
        numeric = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            vals = [x.copy() for x in arrays]
            vals[i][idx] = a[idx] + eps
            hi = f(vals)
            vals[i][idx] = a[idx] - eps
            lo = f(vals)
            numeric[idx] = (hi - lo) / (2 * eps)
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def directional_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], seed: int = 0,
                      eps: float = 1e-3) -> float:
    """Compare the analytic directional derivative along a random unit direction with a float64 difference.

    ``loss_fn`` must be deterministic (no dropout) and read parameter values
    at call time.
    """
    params = list(params)
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]

    for p in params:
        p.grad = None
    nx.backward(loss_fn())
    analytic = sum(float(np.sum(p.grad.astype(np.float64) * d)) for p, d in zip(params, dirs) if p.grad is not None)

    base = [p.data for p in params]
    try:
        def at(t: float) -> float:
            for p, b, d in zip(params, base, dirs):
                p.data = b.astype(np.float64) + t * d
            with nx.default_dtype(np.float64), nx.no_grad():
                return float(loss_fn().data)

        numeric = (at(eps) - at(-eps)) / (2 * eps)
    finally:
        for p, b in zip(params, base):
            p.data = b
    return relative_error(analytic, numeric)
