"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records array-valued primitive operations in execution order, which
is already a topological order, so backward() is a single reverse sweep.
Max nodes route the incoming gradient to the argmax branch only (first
index on ties), which is what subgradient training through unrolled
max-product message passing needs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tape", "Node", "GradientError"]


class GradientError(RuntimeError):
    """Raised when a non-finite value is found during backward."""


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Node:
    __slots__ = ("value", "tape", "parents", "vjp", "grad", "op")

    def __init__(self, value, tape, parents=(), vjp=None, op="leaf"):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.op = op
        if tape.recording:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Tape:
    """Computation-graph recorder.

    With recording=False the same ops run eagerly and keep no graph, so
    forward-only evaluation shares one code path with training.
    """

    def __init__(self, recording=True):
        self.recording = recording
        self.nodes = []

    # -- node creation -----------------------------------------------------

    def wrap(self, x):
        if isinstance(x, Node):
            return x
        return Node(np.asarray(x, dtype=np.float64), self, op="const")

    def leaf(self, value, name="leaf"):
        return Node(np.asarray(value, dtype=np.float64), self, op=name)

    def _make(self, value, parents, vjp, op):
        if not self.recording:
            return Node(value, self, op=op)
        return Node(value, self, parents=parents, vjp=vjp, op=op)

    # -- primitives ----------------------------------------------------------

    def add(self, a, b):
        a, b = self.wrap(a), self.wrap(b)
        out = a.value + b.value

        def vjp(g):
            return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

        return self._make(out, (a, b), vjp, "add")

    def sub(self, a, b):
        a, b = self.wrap(a), self.wrap(b)
        out = a.value - b.value

        def vjp(g):
            return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

        return self._make(out, (a, b), vjp, "sub")

    def mul(self, a, b):
        a, b = self.wrap(a), self.wrap(b)
        out = a.value * b.value

        def vjp(g):
            return (_unbroadcast(g * b.value, a.value.shape),
                    _unbroadcast(g * a.value, b.value.shape))

        return self._make(out, (a, b), vjp, "mul")

    def div(self, a, b):
        a, b = self.wrap(a), self.wrap(b)
        out = a.value / b.value

        def vjp(g):
            return (_unbroadcast(g / b.value, a.value.shape),
                    _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

        return self._make(out, (a, b), vjp, "div")

    def neg(self, a):
        a = self.wrap(a)
        return self._make(-a.value, (a,), lambda g: (-g,), "neg")

    def matmul(self, a, b):
        a, b = self.wrap(a), self.wrap(b)
        out = a.value @ b.value

        def vjp(g):
            return g @ b.value.T, a.value.T @ g

        return self._make(out, (a, b), vjp, "matmul")

    def tanh(self, a):
        a = self.wrap(a)
        out = np.tanh(a.value)
        return self._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def exp(self, a):
        a = self.wrap(a)
        out = np.exp(a.value)
        return self._make(out, (a,), lambda g: (g * out,), "exp")

    def log(self, a):
        a = self.wrap(a)
        return self._make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")

    def sqrt(self, a):
        a = self.wrap(a)
        out = np.sqrt(a.value)
        return self._make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")

    def relu(self, a):
        """max(x, 0); subgradient at the kink is 0."""
        a = self.wrap(a)
        mask = a.value > 0.0
        return self._make(a.value * mask, (a,), lambda g: (g * mask,), "relu")

    def sum(self, a, axis=None, keepdims=False):
        a = self.wrap(a)
        out = a.value.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.value.shape).copy(),)

        return self._make(np.asarray(out), (a,), vjp, "sum")

    def max(self, a, axis, keepdims=False):
        """Max along one axis, gradient routed to the first argmax."""
        a = self.wrap(a)
        idx = np.argmax(a.value, axis=axis)
        out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def vjp(g):
            g = np.asarray(g)
            if not keepdims:
                g = np.expand_dims(g, axis)
            ga = np.zeros_like(a.value)
            np.put_along_axis(ga, np.expand_dims(idx, axis), g, axis=axis)
            return (ga,)

        return self._make(out, (a,), vjp, "max")

    def reshape(self, a, shape):
        a = self.wrap(a)
        old = a.value.shape
        return self._make(a.value.reshape(shape), (a,),
                          lambda g: (g.reshape(old),), "reshape")

    def transpose(self, a, axes):
        a = self.wrap(a)
        inv = np.argsort(axes)
        return self._make(np.transpose(a.value, axes), (a,),
                          lambda g: (np.transpose(g, inv),), "transpose")

    def concat(self, parts, axis=0):
        parts = [self.wrap(p) for p in parts]
        out = np.concatenate([p.value for p in parts], axis=axis)
        sizes = [p.value.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._make(out, tuple(parts), vjp, "concat")

    def getitem(self, a, idx):
        a = self.wrap(a)
        out = a.value[idx]

        def vjp(g):
            ga = np.zeros_like(a.value)
            np.add.at(ga, idx, g)
            return (ga,)

        return self._make(np.asarray(out), (a,), vjp, "getitem")

    def take_along(self, a, idx, axis):
        a = self.wrap(a)
        out = np.take_along_axis(a.value, idx, axis=axis)

        def vjp(g):
            ga = np.zeros_like(a.value)
            np.add.at(ga, _along_index(a.value.shape, idx, axis), g)
            return (ga,)

        return self._make(out, (a,), vjp, "take_along")

    def detach(self, a):
        a = self.wrap(a)
        return Node(a.value, self, op="detach")

    # -- composites ----------------------------------------------------------

    def softmax(self, a, axis):
        """Numerically stable softmax; the shift is a constant, which is
        gradient-exact by shift invariance."""
        a = self.wrap(a)
        shift = np.max(a.value, axis=axis, keepdims=True)
        e = self.exp(self.sub(a, shift))
        return self.div(e, self.sum(e, axis=axis, keepdims=True))

    def dot(self, a, b):
        return self.sum(self.mul(a, b))

    # -- backward ------------------------------------------------------------

    def backward(self, loss):
        if not self.recording:
            raise GradientError("backward on a non-recording tape")
        if not np.isfinite(loss.value).all():
            raise GradientError(f"non-finite loss at node op={loss.op}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def check_finite(self):
        """Diagnostic scan; names the first node with a non-finite value."""
        for i, node in enumerate(self.nodes):
            if not np.isfinite(node.value).all():
                raise GradientError(f"non-finite value at node {i} op={node.op}")


def _along_index(shape, idx, axis):
    """Index tuple equivalent to take_along_axis(_, idx, axis) for add.at."""
    grids = np.ogrid[tuple(slice(s) for s in idx.shape)]
    grids = list(grids)
    grids[axis] = idx
    return tuple(grids)
