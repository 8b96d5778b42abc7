"""Reverse-mode automatic differentiation over dense float64 arrays.

Each operation records its inputs and a backward closure on the value it
produces, so a loss evaluation builds a computation graph whose reverse
traversal yields exact gradients. Operations are numpy-vectorized and
broadcasting-aware; batched matrix products follow ``np.matmul`` semantics,
which keeps graphs small (one node per batched op, not per matrix).

Every primitive checks its output for non-finite entries and raises
:class:`NumericError` naming the primitive, so overflow surfaces at the
operation that caused it rather than as a NaN loss many steps later.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from latentalign.errors import NumericError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A node on the tape: a float64 array plus gradient bookkeeping."""

    __slots__ = ("value", "grad", "_parents", "_backward", "_op")

    # keep numpy from intercepting `ndarray <op> Var`
    __array_ufunc__ = None

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None,
                 op: str = "leaf"):
        v = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericError(op)
        self.value = v
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward
        self._op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self._op}, shape={self.value.shape})"

    def _accum(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self) -> None:
        """Reverse-sweep from this scalar node, accumulating `.grad`."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x, op="const")


# -- primitives ----------------------------------------------------------

def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value + b.value, (a, b), op="add")

    def bw(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(g, b.value.shape))

    out._backward = bw
    return out


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value - b.value, (a, b), op="sub")

    def bw(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(-g, b.value.shape))

    out._backward = bw
    return out


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value * b.value, (a, b), op="mul")

    def bw(g):
        a._accum(_unbroadcast(g * b.value, a.value.shape))
        b._accum(_unbroadcast(g * a.value, b.value.shape))

    out._backward = bw
    return out


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value / b.value, (a, b), op="div")

    def bw(g):
        a._accum(_unbroadcast(g / b.value, a.value.shape))
        b._accum(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    out._backward = bw
    return out


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    out = Var(a.value @ b.value, (a, b), op="matmul")

    def bw(g):
        a._accum(_unbroadcast(g @ b.value.swapaxes(-1, -2), a.value.shape))
        b._accum(_unbroadcast(a.value.swapaxes(-1, -2) @ g, b.value.shape))

    out._backward = bw
    return out


def exp(x) -> Var:
    x = _lift(x)
    out = Var(np.exp(x.value), (x,), op="exp")

    def bw(g):
        x._accum(g * out.value)

    out._backward = bw
    return out


def log(x) -> Var:
    x = _lift(x)
    out = Var(np.log(x.value), (x,), op="log")

    def bw(g):
        x._accum(g / x.value)

    out._backward = bw
    return out


def tanh(x) -> Var:
    x = _lift(x)
    out = Var(np.tanh(x.value), (x,), op="tanh")

    def bw(g):
        x._accum(g * (1.0 - out.value * out.value))

    out._backward = bw
    return out


def sigmoid(x) -> Var:
    x = _lift(x)
    # stable logistic: exp only ever sees non-positive arguments
    v = x.value
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Var(s, (x,), op="sigmoid")

    def bw(g):
        x._accum(g * out.value * (1.0 - out.value))

    out._backward = bw
    return out


def square(x) -> Var:
    x = _lift(x)
    out = Var(x.value * x.value, (x,), op="square")

    def bw(g):
        x._accum(g * 2.0 * x.value)

    out._backward = bw
    return out


def absolute(x) -> Var:
    """|x|, with the subgradient 0 at x = 0."""
    x = _lift(x)
    out = Var(np.abs(x.value), (x,), op="abs")

    def bw(g):
        x._accum(g * np.sign(x.value))

    out._backward = bw
    return out


def clip(x, lo: float, hi: float) -> Var:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    x = _lift(x)
    out = Var(np.clip(x.value, lo, hi), (x,), op="clip")
    inside = (x.value > lo) & (x.value < hi)

    def bw(g):
        x._accum(g * inside)

    out._backward = bw
    return out


def vsum(x, axis=None, keepdims: bool = False) -> Var:
    x = _lift(x)
    out = Var(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), op="sum")

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.value.shape).copy())

    out._backward = bw
    return out


def mean(x, axis=None, keepdims: bool = False) -> Var:
    x = _lift(x)
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(vsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Var:
    x = _lift(x)
    out = Var(x.value.reshape(shape), (x,), op="reshape")

    def bw(g):
        x._accum(g.reshape(x.value.shape))

    out._backward = bw
    return out


def concat(xs: Sequence[Var], axis: int = 0) -> Var:
    xs = [_lift(x) for x in xs]
    out = Var(np.concatenate([x.value for x in xs], axis=axis), tuple(xs), op="concat")
    sizes = [x.value.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            x._accum(g[tuple(idx)])

    out._backward = bw
    return out


def stack(xs: Sequence[Var], axis: int = 0) -> Var:
    xs = [_lift(x) for x in xs]
    out = Var(np.stack([x.value for x in xs], axis=axis), tuple(xs), op="stack")

    def bw(g):
        for i, x in enumerate(xs):
            x._accum(np.take(g, i, axis=axis))

    out._backward = bw
    return out


def gather_rows(x, idx) -> Var:
    """Select rows `x[idx]` along axis 0; rows may repeat."""
    x = _lift(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(x.value[idx], (x,), op="gather_rows")

    def bw(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        x._accum(gx)

    out._backward = bw
    return out


def transpose(x) -> Var:
    """Swap the last two axes."""
    x = _lift(x)
    out = Var(x.value.swapaxes(-1, -2), (x,), op="transpose")

    def bw(g):
        x._accum(g.swapaxes(-1, -2))

    out._backward = bw
    return out


def variance(x, axis: int = 0) -> Var:
    """Unbiased sample variance (n-1 denominator) along `axis`."""
    x = _lift(x)
    n = x.value.shape[axis]
    if n < 2:
        raise ValueError("variance requires at least two entries")
    centered = sub(x, mean(x, axis=axis, keepdims=True))
    return mul(vsum(square(centered), axis=axis), 1.0 / (n - 1))


def constant(value) -> Var:
    """A leaf carrying data that never receives gradient of interest."""
    return Var(value, op="const")
