"""Small array-valued reverse-mode graph for assembling training losses.

Only the handful of operations the losses need are provided. Neural-field
evaluations enter the graph through :func:`field_node`, whose backward pass
is the field's own forward-over-reverse sweep.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A numpy array that remembers how it was computed."""

    def __init__(self, value, parents=(), backward=None, op=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def _accumulate(self, g):
        g = np.asarray(g, dtype=np.float64)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self):
        """Propagate d(self)/d(node) to every node of the graph."""
        if self.value.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        for n in order:
            n.grad = None
        self.grad = np.ones_like(self.value)
        for n in reversed(order):
            if n._backward is not None and n.grad is not None:
                n._backward(n.grad)

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, (a, b), op="add")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def neg(a) -> Tensor:
    out = Tensor(-a.value, (a,), op="neg")
    out._backward = lambda g: a._accumulate(-g)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, (a, b), op="mul")

    def backward(g):
        a._accumulate(_unbroadcast(g * b.value, a.shape))
        b._accumulate(_unbroadcast(g * a.value, b.shape))

    out._backward = backward
    return out


def square(a) -> Tensor:
    out = Tensor(a.value ** 2, (a,), op="square")
    out._backward = lambda g: a._accumulate(2.0 * a.value * g)
    return out


def total(a, axis=None) -> Tensor:
    out = Tensor(a.value.sum(axis=axis), (a,), op="sum")

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    out._backward = backward
    return out


def mean(a) -> Tensor:
    return mul(total(a), 1.0 / a.value.size)


def getitem(a, idx) -> Tensor:
    out = Tensor(a.value[idx], (a,), op="getitem")

    basic = all(isinstance(i, (int, slice)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(a.value)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        a._accumulate(full)

    out._backward = backward
    return out


def reshape(a, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,), op="reshape")
    out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def smooth_norm(sq, eps: float) -> Tensor:
    """``sqrt(sq + eps^2) - eps`` of a non-negative squared magnitude.

    With eps = 0 this is the plain Euclidean norm, and the gradient at a zero
    vector is taken to be 0 (a valid subgradient).
    """
    r = np.sqrt(sq.value + eps * eps)
    out = Tensor(r - eps, (sq,), op="smooth_norm")

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r > 0, 0.5 / r, 0.0)
        sq._accumulate(g * d)

    out._backward = backward
    return out


def smooth_abs(a, eps: float) -> Tensor:
    """Charbonnier absolute value; eps = 0 gives |a| with subgradient 0 at 0."""
    if eps == 0:
        out = Tensor(np.abs(a.value), (a,), op="abs")
        out._backward = lambda g: a._accumulate(g * np.sign(a.value))
        return out
    return smooth_norm(square(a), eps)


def linear_map(a, forward, adjoint) -> Tensor:
    """Apply a linear operator given as a forward/adjoint pair."""
    out = Tensor(forward(a.value), (a,), op="linear")
    out._backward = lambda g: a._accumulate(adjoint(g))
    return out


def field_node(field, points, directions=(), embedded=None) -> Tensor:
    """Evaluate a neural field with input derivatives inside the graph.

    Returns a tensor of shape (n, d_out, 1 + len(directions)); channel 0 is
    the field value and channel k the derivative along ``directions[k-1]``
    (0 = x, 1 = y, 2 = t).
    """
    tape = field.forward(points, directions, embedded)
    value = np.concatenate([tape.output[:, :, None], np.moveaxis(tape.output_tangents, 0, -1)], axis=2)
    out = Tensor(value, (), op="field")

    def backward(g):
        g_tan = np.moveaxis(g[:, :, 1:], -1, 0) if directions else None
        grads = field.backward(tape, g[:, :, 0], g_tan)
        field.accumulate_grads(grads)

    out._backward = backward
    return out


def loss_param_grads(loss: Tensor, fields) -> list[list[np.ndarray]]:
    """Gradients of a scalar loss with respect to every field's parameters."""
    for f in fields:
        f.zero_grad()
    loss.backward()
    return [[g.copy() for g in f.grads] for f in fields]
