"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every forward op builds a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to one gradient per parent.
:func:`backward` walks that graph in reverse topological order.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, ContractError, NumericError, ShapeError


_grad_enabled = True


@contextmanager
def no_grad():
    """Run forward ops without recording the graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: Sequence["Tensor"] = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=grad_fn if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def tensor_sum(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _result(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


def dropout(x: Tensor, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout; ``rng`` is a numpy Generator or an integer seed."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    scale = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse_loss shape mismatch", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size

    def grad_fn(g):
        d = (2.0 * float(g) / n) * diff
        return d, -d

    return _result(np.asarray(np.mean(diff * diff)), (pred, target), grad_fn, "mse_loss")


# -- temporal ops on [T, C] or [B, T, C] -----------------------------------

def _as_batched(a: np.ndarray, op: str) -> tuple[np.ndarray, bool]:
    if a.ndim == 2:
        return a[None], True
    if a.ndim == 3:
        return a, False
    raise ShapeError(f"{op} expects [T, C] or [B, T, C]", a.shape)


def avg_pool1d(x: Tensor, s: int) -> Tensor:
    """Average non-overlapping groups of ``s`` timesteps.

    If T is not a multiple of ``s`` the series is right-padded with its
    final value first; output length is ceil(T / s).
    """
    if s <= 0:
        raise ConfigError(f"pool size must be > 0, got {s}")
    xb, squeeze = _as_batched(x.data, "avg_pool1d")
    B, T, C = xb.shape
    pad = (-T) % s
    if pad:
        xb = np.concatenate([xb, np.repeat(xb[:, -1:, :], pad, axis=1)], axis=1)
    out = xb.reshape(B, (T + pad) // s, s, C).mean(axis=2)

    def grad_fn(g):
        gb = g[None] if squeeze else g
        gx = np.repeat(gb, s, axis=1) / s
        if pad:
            gx[:, T - 1, :] += gx[:, T:, :].sum(axis=1)
            gx = gx[:, :T, :]
        return (gx[0] if squeeze else gx,)

    return _result(out[0] if squeeze else out, (x,), grad_fn, "avg_pool1d")


def upsample_nearest(x: Tensor, s: int, out_length: int | None = None) -> Tensor:
    """Repeat each timestep ``s`` times; optionally truncate to ``out_length``."""
    if s < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {s}")
    xb, squeeze = _as_batched(x.data, "upsample_nearest")
    B, T, C = xb.shape
    full = T * s
    n = full if out_length is None else out_length
    if not 0 < n <= full:
        raise ConfigError(f"out_length must be in (0, {full}], got {out_length}")
    out = np.repeat(xb, s, axis=1)[:, :n, :]

    def grad_fn(g):
        gb = g[None] if squeeze else g
        if n < full:
            gb = np.concatenate([gb, np.zeros((B, full - n, C))], axis=1)
        gx = gb.reshape(B, T, s, C).sum(axis=2)
        return (gx[0] if squeeze else gx,)

    return _result(out[0] if squeeze else out, (x,), grad_fn, "upsample_nearest")
