"""Reverse-mode automatic differentiation over numpy float64 arrays.

Small tape-based engine: every operation builds a Node recording its parents
and a closure that routes the incoming gradient to them.  Graphs are built
eagerly; backward() walks the tape in reverse creation order.  Only the ops
this project needs are implemented, each with an exact vector-Jacobian
product, so gradients are exact up to floating-point rounding (validated
against central finite differences in the tests).

Nonsmooth ops (relu, clip) additionally record a discrete branch pattern.
Comparing the patterns of two nearby evaluations detects when a finite
difference straddles a kink, where the two-sided derivative is undefined.
"""

from __future__ import annotations

import itertools

import numpy as np

_uid = itertools.count()


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "_backward", "requires_grad", "grad", "uid", "branch")

    # keep numpy from intercepting `ndarray <op> Node`; reflected dunders run instead
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None, requires_grad=False, branch=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self.uid = next(_uid)
        self.branch = branch

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self):
        """Accumulate d(self)/d(node) into .grad over the reachable graph."""
        if self.value.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.value.shape}")
        order = _toposort(self, require_grad=True)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, contribution in node._backward(node.grad):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + contribution

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Node:
    return Node(value)


def param(value) -> Node:
    return Node(value, requires_grad=True)


def as_node(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


def _toposort(root: Node, require_grad: bool) -> list[Node]:
    """Reachable nodes in creation order (a valid topological order)."""
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.uid in seen:
            continue
        if require_grad and not node.requires_grad:
            continue
        seen.add(node.uid)
        out.append(node)
        stack.extend(node.parents)
    out.sort(key=lambda n: n.uid)
    return out


def branch_signature(root: Node) -> tuple:
    """Discrete branch pattern of every nonsmooth op reachable from root.

    Two evaluations of the same graph-building code produce comparable
    signatures: node order follows creation order, which the code path fixes.
    """
    return tuple(n.branch.tobytes() for n in _toposort(root, require_grad=False) if n.branch is not None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting added or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def back(g):
        return ((a, _unbroadcast(g, a.value.shape)), (b, _unbroadcast(g, b.value.shape)))

    return Node(a.value + b.value, (a, b), back)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def back(g):
        return ((a, _unbroadcast(g, a.value.shape)), (b, _unbroadcast(-g, b.value.shape)))

    return Node(a.value - b.value, (a, b), back)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def back(g):
        return ((a, _unbroadcast(g * b.value, a.value.shape)), (b, _unbroadcast(g * a.value, b.value.shape)))

    return Node(a.value * b.value, (a, b), back)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)

    def back(g):
        ga = _unbroadcast(g / b.value, a.value.shape)
        gb = _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)
        return ((a, ga), (b, gb))

    return Node(a.value / b.value, (a, b), back)


def neg(a) -> Node:
    a = as_node(a)

    def back(g):
        return ((a, -g),)

    return Node(-a.value, (a,), back)


def matmul(a, b) -> Node:
    """Matrix product for 2-d @ 2-d and 2-d @ 1-d operands."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim == 2 and b.value.ndim == 2:

        def back(g):
            return ((a, g @ b.value.T), (b, a.value.T @ g))

        return Node(a.value @ b.value, (a, b), back)
    if a.value.ndim == 2 and b.value.ndim == 1:

        def back(g):
            return ((a, np.outer(g, b.value)), (b, a.value.T @ g))

        return Node(a.value @ b.value, (a, b), back)
    raise ValueError(f"matmul supports 2d@2d and 2d@1d, got {a.value.ndim}d @ {b.value.ndim}d")


def transpose(a) -> Node:
    a = as_node(a)
    if a.value.ndim != 2:
        raise ValueError("transpose expects a 2-d node")

    def back(g):
        return ((a, g.T),)

    return Node(a.value.T, (a,), back)


def exp(a):
    if not isinstance(a, Node):
        return np.exp(a)
    out_value = np.exp(a.value)

    def back(g):
        return ((a, g * out_value),)

    return Node(out_value, (a,), back)


def log(a):
    if not isinstance(a, Node):
        return np.log(a)

    def back(g):
        return ((a, g / a.value),)

    return Node(np.log(a.value), (a,), back)


def square(a):
    if not isinstance(a, Node):
        return np.square(a)

    def back(g):
        return ((a, g * (2.0 * a.value)),)

    return Node(np.square(a.value), (a,), back)


def sigmoid(a):
    """Numerically stable logistic function."""
    if not isinstance(a, Node):
        x = np.asarray(a, dtype=np.float64)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out if out.shape else float(out)
    out_value = sigmoid(a.value)
    out_value = np.asarray(out_value, dtype=np.float64)

    def back(g):
        return ((a, g * out_value * (1.0 - out_value)),)

    return Node(out_value, (a,), back)


def softplus(a):
    """log(1 + e^x) without overflow; exact for large |x|."""
    if not isinstance(a, Node):
        return np.logaddexp(0.0, a)
    out_value = np.logaddexp(0.0, a.value)

    def back(g):
        return ((a, g * sigmoid(a.value)),)

    return Node(out_value, (a,), back)


def relu(a):
    if not isinstance(a, Node):
        return np.maximum(a, 0.0)
    mask = a.value > 0

    def back(g):
        return ((a, g * mask),)

    # subgradient 0 at exactly 0; mask doubles as the branch pattern
    return Node(np.where(mask, a.value, 0.0), (a,), back, branch=mask.astype(np.int8))


def clip(a, lo: float, hi: float):
    if not isinstance(a, Node):
        return np.clip(a, lo, hi)
    inside = (a.value > lo) & (a.value < hi)
    region = np.where(a.value <= lo, 0, np.where(a.value >= hi, 2, 1)).astype(np.int8)

    def back(g):
        return ((a, g * inside),)

    return Node(np.clip(a.value, lo, hi), (a,), back, branch=region)


def vsum(a, axis=None, keepdims: bool = False):
    """Sum, usable on Node or ndarray (named to avoid shadowing builtins)."""
    if not isinstance(a, Node):
        return np.sum(a, axis=axis, keepdims=keepdims)
    out_value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.value.shape).copy()),)

    return Node(out_value, (a,), back)


def vmean(a, axis=None):
    if not isinstance(a, Node):
        return np.mean(a, axis=axis)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / count)


def concat(parts, axis: int = 0) -> Node:
    parts = [as_node(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple((p, piece) for p, piece in zip(parts, pieces))

    return Node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), back)


def take(a, key) -> Node:
    """Basic indexing (ints/slices); gradient scatters back into place."""
    a = as_node(a)

    def back(g):
        out = np.zeros_like(a.value)
        out[key] += g
        return ((a, out),)

    return Node(a.value[key], (a,), back)
