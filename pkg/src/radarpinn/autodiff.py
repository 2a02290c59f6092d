"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed to build PINN losses exist: affine maps (matmul,
add, slicing), elementwise products, ``tanh``, ``exp``, ``square`` and the
``sum``/``mean`` reductions. Anything else is deliberately unsupported.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable

import numpy as np

log = logging.getLogger(__name__)

EXP_CLAMP = 30.0


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node on the tape: an array value plus how to push gradients to its parents."""

    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")
    __array_priority__ = 100

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None,
                 requires_grad: bool = False):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor(a.value + b.value, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.value, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.value, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.value, b.shape))

        return Tensor(a.value * b.value, (a, b), back)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                ga = g @ b.value.T if b.value.ndim > 1 else np.outer(g, b.value)
                a._accumulate(ga.reshape(a.shape))
            if b.requires_grad:
                if a.value.ndim > 2:
                    gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = a.value.T @ g
                b._accumulate(gb.reshape(b.shape))

        return Tensor(a.value @ b.value, (a, b), back)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, index):
        a = self

        basic = _is_basic(index)

        def back(g):
            full = np.zeros_like(a.value)
            if basic:
                full[index] += g
            else:
                np.add.at(full, index, g)
            a._accumulate(full)

        return Tensor(a.value[index], (a,), back)

    # -- elementwise functions ---------------------------------------------

    def tanh(self):
        a = self
        out = np.tanh(a.value)
        return Tensor(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))

    def exp(self):
        a = self
        z = a.value
        if np.any(z > EXP_CLAMP):
            log.warning("exp input above %.0f clamped (max %.3g)", EXP_CLAMP, float(z.max()))
        clamped = z > EXP_CLAMP
        out = np.exp(np.minimum(z, EXP_CLAMP))
        return Tensor(out, (a,), lambda g: a._accumulate(np.where(clamped, 0.0, g * out)))

    def square(self):
        a = self
        return Tensor(a.value * a.value, (a,), lambda g: a._accumulate(2.0 * g * a.value))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None):
        a = self

        def back(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

        return Tensor(a.value.sum(axis=axis), (a,), back)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) * (1.0 / n)

    # -- driver ---------------------------------------------------------------

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _is_basic(index) -> bool:
    """Slices and integers never repeat an element, so ``+=`` scatters correctly."""
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents)
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else x


def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def exp(x):
    return as_tensor(x).exp() if isinstance(x, Tensor) else as_tensor(x).exp().value


def leaf(value) -> Tensor:
    return Tensor(np.array(value, dtype=float), requires_grad=True)


def grad_of(loss: Tensor, leaves: Iterable[Tensor]) -> list[np.ndarray]:
    loss.backward()
    return [np.zeros_like(t.value) if t.grad is None else t.grad for t in leaves]

