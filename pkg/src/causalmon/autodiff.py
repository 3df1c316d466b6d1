"""Minimal reverse-mode differentiation engine over numpy arrays.

Supports exactly the operations the reconstruction network and the
structure-learning losses need: broadcast arithmetic, matrix products,
sigmoid/tanh/log/abs/clamp, reductions, and stack/concat for assembling
sequence outputs.  Graphs are built dynamically; ``backward()`` on a
scalar loss accumulates gradients into every reachable leaf that has
``requires_grad`` set.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node of the computation graph wrapping a float64 ndarray.

    ``grad`` is allocated for every node that requires gradients and is
    accumulated (+=) by ``backward``; call ``zero_grad`` (or an optimizer's
    ``zero_grad``) between optimization steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer mixed ndarray-Tensor arithmetic to our reflected ops
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out.grad = np.zeros_like(data)
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        else:
            out.grad = None
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a.grad += _unbroadcast(g, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g, b.data.shape)

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g, a=self):
            a.grad += -g

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        data = self.data * other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a.grad += _unbroadcast(g * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(g * a.data, b.data.shape)

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return as_tensor(other) * self ** -1.0

    def __pow__(self, exponent):
        c = float(exponent)
        data = self.data ** c

        def backward(g, a=self, c=c):
            a.grad += g * c * a.data ** (c - 1.0)

        return Tensor._result(data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        data = self.data @ other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a.grad += _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

        return Tensor._result(data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    @property
    def mT(self):
        """Transpose of the last two axes."""

        def backward(g, a=self):
            a.grad += np.swapaxes(g, -1, -2)

        return Tensor._result(np.swapaxes(self.data, -1, -2), (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def backward(g, a=self, old=old):
            a.grad += g.reshape(old)

        return Tensor._result(self.data.reshape(shape), (self,), backward)

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self, axis=axis, keepdims=keepdims):
            if axis is None:
                a.grad += np.broadcast_to(g, a.data.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a.grad += np.broadcast_to(gg, a.data.shape)

        return Tensor._result(data, (self,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def sigmoid(self):
        s = expit(self.data)

        def backward(g, a=self, s=s):
            a.grad += g * s * (1.0 - s)

        return Tensor._result(s, (self,), backward)

    def tanh(self):
        t = np.tanh(self.data)

        def backward(g, a=self, t=t):
            a.grad += g * (1.0 - t * t)

        return Tensor._result(t, (self,), backward)

    def log(self):
        def backward(g, a=self):
            a.grad += g / a.data

        return Tensor._result(np.log(self.data), (self,), backward)

    def abs(self):
        def backward(g, a=self):
            a.grad += g * np.sign(a.data)

        return Tensor._result(np.abs(self.data), (self,), backward)

    def clamp(self, lo, hi):
        """Clip values to [lo, hi]; gradient passes only where unclipped."""
        mask = (self.data >= lo) & (self.data <= hi)

        def backward(g, a=self, mask=mask):
            a.grad += g * mask

        return Tensor._result(np.clip(self.data, lo, hi), (self,), backward)

    # -- backward pass ---------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self.requires_grad:
            return
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def stack(tensors, axis=0):
    """Stack tensors along a new axis (differentiable)."""
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g, parts=tensors, axis=axis):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.grad += np.take(g, i, axis=axis)

    return Tensor._result(data, tuple(tensors), backward)


def concat(tensors, axis=-1):
    """Concatenate tensors along an existing axis (differentiable)."""
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g, parts=tensors, axis=axis, sizes=sizes):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                p.grad += g[tuple(index)]
            offset += size

    return Tensor._result(data, tuple(tensors), backward)
