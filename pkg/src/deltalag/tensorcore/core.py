"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every primitive computes its value eagerly with numpy.  While a :class:`Tape`
is active and at least one input requires a gradient, the primitive also
appends a node holding a closure that maps the output adjoint to the input
adjoints.  Nodes are appended in creation order, so walking the tape backwards
is already a valid reverse topological order.

    >>> W = Tensor(np.zeros((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = reduce_sum(tanh(W))
    >>> tape.backward(loss)
    >>> W.grad
    array([[1., 1.],
           [1., 1.]])
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ContractError, DimensionError, DomainError

_ACTIVE: list["Tape"] = []
# op name -> multiplier applied to that op's adjoints; test hook for checker sensitivity
_FAULTS: dict[str, float] = {}


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    out: Tensor
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable primitive applications."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(n.out) for n in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            scale = _FAULTS.get(node.op)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if scale is not None:
                    pg = pg * scale
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if key not in produced:
                    leaves[key] = p
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=np.float64).reshape(leaf.shape)
            else:
                leaf.grad = leaf.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


@contextlib.contextmanager
def inject_fault(op: str, scale: float = 1.5):
    """Scale the adjoint of every ``op`` node by ``scale`` while active."""
    _FAULTS[op] = scale
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def _record(op: str, out_data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(Node(op, out, parents, bwd))
    return out


def _check_finite(op: str, data: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{op} produced non-finite values")
    return data


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- binary elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bwd(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _record("div", out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", a.data @ b.data, (a, b), bwd)


# --- unary elementwise --------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _check_finite("exp", np.exp(a.data))
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def log1p_exp(a) -> Tensor:
    """Softplus, log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|)."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _record("log1p_exp", out, (a,), lambda g: (g * expit(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)

    def bwd(g):
        if np.any(out == 0):
            raise DomainError("sqrt adjoint undefined at 0")
        return (g * 0.5 / out,)

    return _record("sqrt", out, (a,), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def row_softmax(a) -> Tensor:
    """Softmax along the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("row_softmax", out, (a,), bwd)


# --- structural ---------------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, ts, bwd)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _record("stack", out, ts, bwd)


def slice_(a, idx) -> Tensor:
    """Basic (non-fancy) indexing: ints, slices, Ellipsis, None."""
    a = as_tensor(a)
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from None
    if isinstance(out, np.ndarray) and np.shares_memory(out, a.data):
        out = out.copy()
    else:
        out = np.asarray(out, dtype=np.float64)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _record("slice", out, (a,), bwd)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` by a fixed integer index array; adjoint is scatter-add."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    try:
        out = np.take(a.data, indices, axis=axis)
    except IndexError as exc:
        raise DimensionError(f"take: {exc}") from None

    def bwd(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        g_moved = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, g_moved)
        return (full,)

    return _record("take", out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _record("reshape", out.copy(), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _record("transpose", out.copy(), (a,), lambda g: (np.transpose(g, inv),))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("reduce_sum", out, (a,), bwd)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DimensionError("reduce_mean of empty tensor")
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record("reduce_mean", out, (a,), bwd)
