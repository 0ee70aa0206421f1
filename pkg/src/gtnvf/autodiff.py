"""A small tape-based reverse-mode differentiation core over numpy arrays.

Only the operations the graph transformer and the MLP need are provided.
Every op records a closure mapping the output gradient to the gradients of
its inputs; ``Tensor.backward`` replays them in reverse topological order.
Segment ops assume edges sorted by segment and delimited by a CSR-style
pointer array, which keeps every reduction in a fixed order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _node(out, (a,), lambda g: (g * sig,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


# ----------------------------------------------------------------- reductions / shape


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(out, (a,), back)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T, (a,), lambda g: (g.T,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather ``a[idx]``; the gradient scatters back with accumulation."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), back)


def slice_rows(a: Tensor, n: int) -> Tensor:
    """The first ``n`` rows."""

    def back(g):
        out = np.zeros_like(a.data)
        out[:n] = g
        return (out,)

    return _node(a.data[:n], (a,), back)


# ----------------------------------------------------------------- segments


def _segment_reduce(ufunc, x: np.ndarray, ptr: np.ndarray, fill: float) -> np.ndarray:
    n_seg = len(ptr) - 1
    out = np.full((n_seg,) + x.shape[1:], fill)
    nonempty = ptr[1:] > ptr[:-1]
    if nonempty.any():
        out[nonempty] = ufunc.reduceat(x, ptr[:-1][nonempty], axis=0)
    return out


def segment_ids(ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(ptr) - 1), np.diff(ptr))


def segment_sum(x: Tensor, ptr: np.ndarray) -> Tensor:
    """Sum consecutive rows of ``x`` per segment; empty segments give 0."""
    seg = segment_ids(ptr)
    return _node(_segment_reduce(np.add, x.data, ptr, 0.0), (x,), lambda g: (g[seg],))


def segment_softmax(x: Tensor, ptr: np.ndarray) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    seg = segment_ids(ptr)
    if len(seg) == 0:
        return _node(x.data.copy(), (x,), lambda g: (g,))
    peak = _segment_reduce(np.maximum, x.data, ptr, 0.0)
    e = np.exp(x.data - peak[seg])
    y = e / _segment_reduce(np.add, e, ptr, 1.0)[seg]

    def back(g):
        dot = _segment_reduce(np.add, g * y, ptr, 0.0)
        return (y * (g - dot[seg]),)

    return _node(y, (x,), back)


# ----------------------------------------------------------------- losses


def rmspe(pred: Tensor, target: np.ndarray, eps: float) -> Tensor:
    """sqrt(mean(((pred - target) / (target + eps))**2))."""
    inv = 1.0 / (np.asarray(target, dtype=np.float64) + eps)
    return sqrt(mean(square(mul(sub(pred, target), inv))))
