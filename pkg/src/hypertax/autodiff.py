"""Reverse-mode automatic differentiation on numpy arrays.

A small tape: each `Tensor` wraps a float64 ndarray and remembers how it was
produced. `backward()` walks the tape once and accumulates gradients into
every reachable tensor. All ops broadcast like numpy; gradients are summed
back down to the operand's shape.

The module-level functions (`tanh`, `log`, `vsum`, ...) dispatch on type:
given plain ndarrays they compute in numpy and return ndarrays, given
Tensors they extend the tape. Code written against them runs identically
as a fast evaluation path and as a differentiable path.

Tie-breaking contract: `reduce_min` / `reduce_max` route the gradient to the
first extremal index along the axis (numpy argmin/argmax order), never split
it. `maximum` routes the gradient to the first argument on exact ties.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "backward", "is_tensor", "value",
    "tanh", "sigmoid", "log", "exp", "sqrt", "asinh", "absolute", "maximum",
    "vsum", "vmean", "reduce_min", "reduce_max",
    "take_cols", "take_rows", "take_per_row", "expand_dims", "matmul",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node of the tape. `data` is always a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    # make `ndarray <op> Tensor` defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __float__(self):
        return float(self.data)

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(grad, self.data.shape)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, (self, other))
            out._backward = lambda g: (self._accumulate(g), other._accumulate(g))
        else:
            out = Tensor(self.data + other, (self,))
            out._backward = lambda g: self._accumulate(g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, (self, other))

            def back(g):
                self._accumulate(g * other.data)
                other._accumulate(g * self.data)

            out._backward = back
        else:
            other = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data * other, (self,))
            out._backward = lambda g: self._accumulate(g * other)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data / other.data, (self, other))

            def back(g):
                self._accumulate(g / other.data)
                other._accumulate(-g * self.data / (other.data * other.data))

            out._backward = back
        else:
            other = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data / other, (self,))
            out._backward = lambda g: self._accumulate(g / other)
        return out

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=np.float64)
        out = Tensor(other / self.data, (self,))
        out._backward = lambda g: self._accumulate(-g * other / (self.data * self.data))
        return out

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** p, (self,))
        out._backward = lambda g: self._accumulate(g * p * self.data ** (p - 1))
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value(x) -> np.ndarray:
    """Raw ndarray behind `x`, whether Tensor or array-like."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def backward(out: Tensor) -> None:
    """Backpropagate from a scalar tensor through the whole tape."""
    if out.data.size != 1:
        raise ValueError("backward() expects a scalar output")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- unary kernels ----------------------------------------------------------

def _unary(x, fn, dfn):
    if isinstance(x, Tensor):
        y = fn(x.data)
        out = Tensor(y, (x,))
        out._backward = lambda g: x._accumulate(g * dfn(x.data, y))
        return out
    return fn(np.asarray(x, dtype=np.float64))


def tanh(x):
    return _unary(x, np.tanh, lambda v, y: 1.0 - y * y)


def sigmoid(x):
    def fn(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return _unary(x, fn, lambda v, y: y * (1.0 - y))


def log(x):
    return _unary(x, np.log, lambda v, y: 1.0 / v)


def exp(x):
    return _unary(x, np.exp, lambda v, y: y)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, y: 0.5 / y)


def asinh(x):
    # numpy's arcsinh is the log1p-stable form; derivative 1/sqrt(1+x^2)
    return _unary(x, np.arcsinh, lambda v, y: 1.0 / np.sqrt(1.0 + v * v))


def absolute(x):
    # subgradient 0 at exactly 0
    return _unary(x, np.abs, lambda v, y: np.sign(v))


def maximum(x, floor):
    """Elementwise max against a constant; gradient flows where x >= floor."""
    floor = np.asarray(floor, dtype=np.float64)
    if isinstance(x, Tensor):
        out = Tensor(np.maximum(x.data, floor), (x,))
        mask = (x.data >= floor).astype(np.float64)
        out._backward = lambda g: x._accumulate(g * mask)
        return out
    return np.maximum(np.asarray(x, dtype=np.float64), floor)


# -- reductions -------------------------------------------------------------

def vsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims), (x,))

    def back(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.data.shape))

    out._backward = back
    return out


def vmean(x, axis=None):
    data = value(x)
    n = data.size if axis is None else data.shape[axis]
    return vsum(x, axis=axis) * (1.0 / n)


def _extremum(x, axis, argfn):
    idx = argfn(value(x), axis=axis)
    taken = np.take_along_axis(value(x), np.expand_dims(idx, axis), axis=axis)
    taken = np.squeeze(taken, axis=axis)
    if not isinstance(x, Tensor):
        return taken
    out = Tensor(taken, (x,))

    def back(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        x._accumulate(full)

    out._backward = back
    return out


def reduce_min(x, axis):
    """Min along `axis`; gradient goes to the first argmin only."""
    return _extremum(x, axis, np.argmin)


def reduce_max(x, axis):
    """Max along `axis`; gradient goes to the first argmax only."""
    return _extremum(x, axis, np.argmax)


# -- gather ops -------------------------------------------------------------

def take_cols(x, cols):
    """Select columns of a 2-D array: out = x[:, cols]."""
    cols = np.asarray(cols, dtype=np.intp)
    if not isinstance(x, Tensor):
        return np.asarray(x, dtype=np.float64)[:, cols]
    out = Tensor(x.data[:, cols], (x,))

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None), cols), g)
        x._accumulate(full)

    out._backward = back
    return out


def take_rows(x, rows):
    """Select rows: out = x[rows]."""
    rows = np.asarray(rows, dtype=np.intp)
    if not isinstance(x, Tensor):
        return np.asarray(x, dtype=np.float64)[rows]
    out = Tensor(x.data[rows], (x,))

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, rows, g)
        x._accumulate(full)

    out._backward = back
    return out


def take_per_row(x, idx):
    """out[i] = x[i, idx[i]] for a 2-D array."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(len(idx))
    if not isinstance(x, Tensor):
        return np.asarray(x, dtype=np.float64)[rows, idx]
    out = Tensor(x.data[rows, idx], (x,))

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, idx), g)
        x._accumulate(full)

    out._backward = back
    return out


def expand_dims(x, axis):
    if not isinstance(x, Tensor):
        return np.expand_dims(np.asarray(x, dtype=np.float64), axis)
    out = Tensor(np.expand_dims(x.data, axis), (x,))
    out._backward = lambda g: x._accumulate(g.reshape(x.data.shape))
    return out


def matmul(a, b):
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    av = value(a)
    bv = value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    if not (a_t or b_t):
        return av @ bv
    parents = tuple(p for p, t in ((a, a_t), (b, b_t)) if t)
    out = Tensor(av @ bv, parents)

    def back(g):
        if a_t:
            a._accumulate(g @ bv.T)
        if b_t:
            b._accumulate(av.T @ g)

    out._backward = back
    return out
