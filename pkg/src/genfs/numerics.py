"""Dense tensors with define-by-run reverse-mode autodiff, plus Adam.

Every op builds its output eagerly and records a closure that pushes the
output gradient back into its parents. ``backward`` walks the graph in
reverse topological order, so each node is visited exactly once.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors and op constants."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        out._parents = tuple(parents) if tracked else ()
        out._backward = backward if tracked else None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    # -- elementwise arithmetic -------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other, self)
        a, b = self, other

        def bw(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(a.data + b.data, (a, b), "add", bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._result(-a.data, (a,), "neg", lambda g: a._accumulate(-g))

    def __sub__(self, other):
        return self + (-_as_tensor(other, self))

    def __rsub__(self, other):
        return _as_tensor(other, self) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, (a, b), "mul", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor._result(out, (a, b), "div", bw)

    def __rtruediv__(self, other):
        return _as_tensor(other, self) / self

    def __pow__(self, power: float):
        a = self
        out = a.data ** power

        def bw(g):
            a._accumulate(g * power * a.data ** (power - 1))

        return Tensor._result(out, (a,), "pow", bw)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._result(a.data.reshape(shape), (a,), "reshape",
                              lambda g: a._accumulate(g.reshape(a.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        inverse = tuple(np.argsort(axes))
        a = self
        return Tensor._result(a.data.transpose(axes), (a,), "transpose",
                              lambda g: a._accumulate(g.transpose(inverse)))

    def __getitem__(self, index):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor._result(a.data[index], (a,), "getitem", bw)

    # -- reductions -------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        out = a.data.sum(axis=axis, keepdims=keepdims, dtype=a.data.dtype)
        return Tensor._result(np.asarray(out), (a,), "sum", bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise functions --------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._result(out, (a,), "exp", lambda g: a._accumulate(g * out))

    def log(self):
        a = self
        return Tensor._result(np.log(a.data), (a,), "log", lambda g: a._accumulate(g / a.data))

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._result(a.data * mask, (a,), "relu", lambda g: a._accumulate(g * mask))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._result(out, (a,), "tanh", lambda g: a._accumulate(g * (1 - out * out)))

    def softmax(self, axis: int = -1):
        return softmax(self, axis)

    def log_softmax(self, axis: int = -1):
        return log_softmax(self, axis)

    def backward(self):
        backward(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DTYPE
    return Tensor(x, dtype=dtype)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading axes with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return Tensor._result(a.data @ b.data, (a, b), "matmul", bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor._result(out, (x,), "softmax", bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        x._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return Tensor._result(out, (x,), "log_softmax", bw)


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = 0) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_index.

    ``logits`` has shape (..., V); ``targets`` the leading shape (...).
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} vs logits {logits.shape}")
    flat_t = targets.reshape(-1)
    keep = np.ones_like(flat_t, dtype=bool) if ignore_index is None else flat_t != ignore_index
    bad = keep & ((flat_t < 0) | (flat_t >= V))
    if bad.any():
        raise IndexError(f"target index {flat_t[bad][0]} outside vocabulary of size {V}")
    count = int(keep.sum())

    x = logits.data.reshape(-1, V)
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True, dtype=np.float64)).astype(x.dtype)
    logp = z - lse
    rows = np.nonzero(keep)[0]
    nll = -logp[rows, flat_t[rows]].sum(dtype=np.float64)
    loss = np.asarray(nll / count if count else 0.0, dtype=x.dtype)

    def bw(g):
        if not count:
            logits._accumulate(np.zeros_like(logits.data))
            return
        grad = np.exp(logp)
        grad[rows, flat_t[rows]] -= 1.0
        grad[~keep] = 0.0
        grad *= g / count
        logits._accumulate(grad.reshape(logits.shape))

    return Tensor._result(loss, (logits,), "cross_entropy", bw)


def embedding(table: Tensor, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"embedding index out of range for table of {n} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)

    return Tensor._result(table.data[indices], (table,), "embedding", bw)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * weight.data + bias.data

    def bw(g):
        if weight.requires_grad:
            weight._accumulate(_unbroadcast(g * xhat, weight.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * weight.data
            d = x.shape[-1]
            x._accumulate(inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                                     - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))

    return Tensor._result(out, (x, weight, bias), "layer_norm", bw)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by a constant; those get no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, np.asarray(value, dtype=x.data.dtype), x.data)
    return Tensor._result(out, (x,), "masked_fill", lambda g: x._accumulate(np.where(mask, 0, g)))


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return Tensor._result(x.data * keep, (x,), "dropout", lambda g: x._accumulate(g * keep))


def stack_weighted(tensors: Sequence[Tensor], weights: np.ndarray) -> Tensor:
    """Sum_k weights[..., k] * tensors[k]; weights are constants broadcast from the left."""
    weights = np.asarray(weights)
    out = None
    for k, t in enumerate(tensors):
        w = weights[..., k].reshape(weights.shape[:-1] + (1,) * (t.ndim - weights.ndim + 1))
        term = t * Tensor(w, dtype=t.data.dtype)
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# Backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need gradients, inputs before consumers."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is None and node.grad is not None and not np.isfinite(node.grad).all():
            raise FloatingPointError("non-finite gradient reached a leaf tensor")


# ---------------------------------------------------------------------------
# Optimisation


def l2_penalty(params: Iterable[Tensor], gamma: float) -> Tensor:
    """gamma * sum of squared parameter values (squared-norm convention)."""
    if not gamma > 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    params = list(params)
    total = sum(float(np.sum(p.data.astype(np.float64) ** 2)) for p in params)
    dtype = params[0].data.dtype if params else _DTYPE

    def bw(g):
        for p in params:
            p._accumulate((2.0 * gamma) * g * p.data)

    return Tensor._result(np.asarray(gamma * total, dtype=dtype), params, "l2", bw)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale grads in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    params = [p for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if not (self.eps > 0 and self.lr > 0):
            raise ConfigError("Adam lr and eps must be positive")


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``. Missing grads count as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError("Adam state was built for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} vs parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
    return state
