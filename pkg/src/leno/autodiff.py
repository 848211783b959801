"""Minimal reverse-mode autodiff on numpy arrays.

A Var wraps a float64 array (0-d for scalars) and remembers how it was
produced; calling backward() on a scalar Var accumulates exact gradients
into every upstream Var. Supports the handful of primitives the training
losses need: elementwise arithmetic with broadcasting, matmul, relu,
sigmoid, exp, log, sqrt, abs, sums, concatenation and column slicing.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (undo numpy broadcasting)."""
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
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros(self.value.shape, dtype=np.float64)
        self.grad += _unbroadcast(np.asarray(g), self.value.shape)

    # -- graph ----------------------------------------------------------

    def backward(self):
        if self.value.shape != ():
            raise ValueError("backward() needs a scalar root")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def item(self) -> float:
        return float(self.value)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_var(other)
        out = Var(self.value + other.value, (self, other))
        def back():
            self._accum(out.grad)
            other._accum(out.grad)
        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out._backward = lambda: self._accum(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __mul__(self, other):
        other = as_var(other)
        out = Var(self.value * other.value, (self, other))
        def back():
            self._accum(out.grad * other.value)
            other._accum(out.grad * self.value)
        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        out = Var(self.value / other.value, (self, other))
        def back():
            self._accum(out.grad / other.value)
            other._accum(-out.grad * self.value / other.value**2)
        out._backward = back
        return out

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only scalar exponents")
        out = Var(self.value**n, (self,))
        out._backward = lambda: self._accum(out.grad * n * self.value ** (n - 1))
        return out

    def __matmul__(self, other):
        other = as_var(other)
        out = Var(self.value @ other.value, (self, other))
        def back():
            self._accum(out.grad @ other.value.T)
            other._accum(self.value.T @ out.grad)
        out._backward = back
        return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# -- elementwise functions ---------------------------------------------

def relu(x: Var) -> Var:
    out = Var(np.maximum(x.value, 0.0), (x,))
    out._backward = lambda: x._accum(out.grad * (x.value > 0))
    return out


def sigmoid(x: Var) -> Var:
    # clamped into the open interval to match networks.forward
    s = np.clip(
        expit(x.value),
        np.finfo(np.float64).tiny,
        np.nextafter(1.0, 0.0),
    )
    out = Var(s, (x,))
    out._backward = lambda: x._accum(out.grad * s * (1.0 - s))
    return out


def exp(x: Var) -> Var:
    out = Var(np.exp(x.value), (x,))
    out._backward = lambda: x._accum(out.grad * out.value)
    return out


def log(x: Var) -> Var:
    out = Var(np.log(x.value), (x,))
    out._backward = lambda: x._accum(out.grad / x.value)
    return out


def sqrt(x: Var) -> Var:
    out = Var(np.sqrt(x.value), (x,))
    out._backward = lambda: x._accum(out.grad * 0.5 / out.value)
    return out


def absolute(x: Var) -> Var:
    out = Var(np.abs(x.value), (x,))
    out._backward = lambda: x._accum(out.grad * np.sign(x.value))
    return out


# -- reductions and shape ops ------------------------------------------

def vsum(x: Var, axis=None, keepdims=False) -> Var:
    out = Var(x.value.sum(axis=axis, keepdims=keepdims), (x,))
    def back():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.value.shape))
    out._backward = back
    return out


def vmean(x: Var, axis=None) -> Var:
    n = x.value.size if axis is None else x.value.shape[axis]
    return vsum(x, axis=axis) * (1.0 / n)


def concat(xs: list[Var], axis: int = 1) -> Var:
    xs = [as_var(x) for x in xs]
    out = Var(np.concatenate([x.value for x in xs], axis=axis), tuple(xs))
    splits = np.cumsum([x.value.shape[axis] for x in xs])[:-1]
    def back():
        for x, piece in zip(xs, np.split(out.grad, splits, axis=axis)):
            x._accum(piece)
    out._backward = back
    return out


def cols(x: Var, start: int, stop: int) -> Var:
    out = Var(x.value[:, start:stop], (x,))
    def back():
        g = np.zeros(x.value.shape, dtype=np.float64)
        g[:, start:stop] = out.grad
        x._accum(g)
    out._backward = back
    return out


def row_norms(x: Var) -> Var:
    """Euclidean norm of each row of a 2D Var: returns shape (B,)."""
    return sqrt(vsum(x * x, axis=1))
