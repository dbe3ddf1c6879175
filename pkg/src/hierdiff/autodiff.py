"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Define-by-run: every operation on a ``Tensor`` records its parents and a
backward closure on a tape; calling :meth:`Tensor.backward` on a scalar walks
the tape in reverse topological order. All values are float64 and every
operation boundary rejects NaN/Inf so numerical failures surface at the node
that produced them instead of corrupting a training run.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeError

_node_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _check_finite(data: np.ndarray, op: str, node_id: int) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value at node #{node_id} (op={op})")


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient and tape linkage."""

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = _as_array(data)
        self.node_id = next(_node_counter)
        _check_finite(self.data, op, self.node_id)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- tape ------------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar loss through the recorded tape."""
        if self.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape} at node #{self.node_id}")
        if not self.requires_grad or (self._backward_fn is None and not self._parents and self.op == "leaf"):
            raise GraphError("backward called before any differentiable forward computation")
        _check_finite(self.data, self.op, self.node_id)

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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- arithmetic --------------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out_data = self.data + other.data

        def backward_fn(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(grad, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(grad, b.shape))

        return _record(out_data, (self, other), backward_fn, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        out_data = self.data - other.data

        def backward_fn(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(grad, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(-grad, b.shape))

        return _record(out_data, (self, other), backward_fn, "sub")

    def __rsub__(self, other):
        return _lift(other).__sub__(self)

    def __mul__(self, other):
        other = _lift(other)
        out_data = self.data * other.data

        def backward_fn(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(grad * a.data, b.shape))

        return _record(out_data, (self, other), backward_fn, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = self.data / other.data

        def backward_fn(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(-grad * a.data / (b.data * b.data), b.shape))

        return _record(out_data, (self, other), backward_fn, "div")

    def __rtruediv__(self, other):
        return _lift(other).__truediv__(self)

    def __neg__(self):
        def backward_fn(grad, a=self):
            a._accumulate(-grad)

        return _record(-self.data, (self,), backward_fn, "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise ShapeError("pow supports scalar exponents only")
        exponent = float(exponent)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out_data = self.data ** exponent

        def backward_fn(grad, a=self, p=exponent):
            a._accumulate(grad * p * a.data ** (p - 1.0))

        return _record(out_data, (self,), backward_fn, "pow")

    def __matmul__(self, other):
        other = _lift(other)
        if self.data.ndim < 1 or other.data.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {self.shape} @ {other.shape}")
        if self.data.shape[-1] != other.data.shape[-2]:
            raise ShapeError(
                f"matmul inner-dimension mismatch at node #{self.node_id}: {self.shape} @ {other.shape}"
            )
        out_data = np.matmul(self.data, other.data)

        def backward_fn(grad, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape))

        return _record(out_data, (self, other), backward_fn, "matmul")

    # -- elementwise functions -----------------------------------------------------

    def exp(self):
        with np.errstate(over="ignore"):
            out_data = np.exp(self.data)

        def backward_fn(grad, a=self, out=out_data):
            a._accumulate(grad * out)

        return _record(out_data, (self,), backward_fn, "exp")

    def log(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = np.log(self.data)

        def backward_fn(grad, a=self):
            a._accumulate(grad / a.data)

        return _record(out_data, (self,), backward_fn, "log")

    def sqrt(self):
        with np.errstate(invalid="ignore"):
            out_data = np.sqrt(self.data)

        def backward_fn(grad, a=self, out=out_data):
            a._accumulate(grad * 0.5 / out)

        return _record(out_data, (self,), backward_fn, "sqrt")

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward_fn(grad, a=self, out=out_data):
            a._accumulate(grad * (1.0 - out * out))

        return _record(out_data, (self,), backward_fn, "tanh")

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward_fn(grad, a=self, out=out_data):
            a._accumulate(grad * out * (1.0 - out))

        return _record(out_data, (self,), backward_fn, "sigmoid")

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward_fn(grad, a=self):
            a._accumulate(grad * (a.data > 0.0))

        return _record(out_data, (self,), backward_fn, "relu")

    def silu(self):
        """x * sigmoid(x)."""
        sig = 1.0 / (1.0 + np.exp(-self.data))
        out_data = self.data * sig

        def backward_fn(grad, a=self, s=sig):
            a._accumulate(grad * (s + a.data * s * (1.0 - s)))

        return _record(out_data, (self,), backward_fn, "silu")

    # -- reductions / shaping -----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward_fn(grad, a=self, ax=axis, kd=keepdims):
            g = grad
            if ax is not None and not kd:
                g = np.expand_dims(g, ax)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return _record(out_data, (self,), backward_fn, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward_fn(grad, a=self):
            a._accumulate(grad.reshape(a.shape))

        return _record(out_data, (self,), backward_fn, "reshape")

    def swapaxes(self, axis1: int, axis2: int):
        out_data = np.swapaxes(self.data, axis1, axis2)

        def backward_fn(grad, a=self, i=axis1, j=axis2):
            a._accumulate(np.swapaxes(grad, i, j))

        return _record(out_data, (self,), backward_fn, "swapaxes")

    def take(self, indices):
        """Gather rows along axis 0 (embedding lookup)."""
        idx = np.asarray(indices)
        if idx.ndim > 1:
            raise ShapeError("take expects a flat index array")
        if idx.size and (idx.min() < -self.shape[0] or idx.max() >= self.shape[0]):
            raise ShapeError(f"take index out of range for table with {self.shape[0]} rows")
        out_data = self.data[idx]

        def backward_fn(grad, a=self, i=idx):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, i, grad)

        return _record(out_data, (self,), backward_fn, "take")

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward_fn(grad, a=self, out=out_data, ax=axis):
            inner = (grad * out).sum(axis=ax, keepdims=True)
            a._accumulate(out * (grad - inner))

        return _record(out_data, (self,), backward_fn, "softmax")


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out_data: np.ndarray, parents: tuple, backward_fn, op: str) -> Tensor:
    needs_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if needs_grad:
        return Tensor(out_data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(out_data, op=op)


class Parameter(Tensor):
    """A trainable tensor carrying adaptive-moment optimizer state."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, op="param")
        self.name = name
        self.first_moment = np.zeros_like(self.data)
        self.second_moment = np.zeros_like(self.data)
        self.step_count = 0


def collect_gradients(parameters) -> dict:
    """Gradient map after backward; parameters that did not participate get zeros."""
    grads = {}
    for i, param in enumerate(parameters):
        key = param.name if param.name is not None else f"param{i}"
        grads[key] = param.grad if param.grad is not None else np.zeros_like(param.data)
    return grads
