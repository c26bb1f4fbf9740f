"""Dense tensors with a reverse-mode gradient tape."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NotScalar

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(data, dtype) -> np.ndarray:
    if dtype is not None:
        return np.array(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype.type in _FLOAT_DTYPES:
        return np.array(arr)
    return arr.astype(np.float32)


class Tensor:
    """N-dimensional float32/float64 array that can record gradients.

    Tensors produced by an op hold references to their inputs and a closure
    mapping the output gradient to input gradients.  ``backward`` walks that
    graph once in reverse topological order.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn,
                op: str) -> Tensor:
        parents = tuple(parents)
        out = cls(data, dtype=data.dtype)
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.grad = np.zeros_like(out.data)
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg}, op={self.op})"

    # elementwise arithmetic, enough for test losses and fan-out checks
    def __add__(self, other) -> Tensor:
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other) -> Tensor:
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return mul(self, Tensor(-1.0, dtype=self.dtype))

    def __sub__(self, other) -> Tensor:
        return add(self, -_wrap(other, self.dtype))

    def sum(self) -> Tensor:
        return sum_all(self)


def _wrap(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), bw, "mul")


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bw, "sum")


class Tape:
    """Recorded ops reachable from one output, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.from_output(loss)
    for node in tape:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.data)
    loss.grad = loss.grad + 1
    for node in reversed(tape.nodes):
        if node.is_leaf:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None and parent.requires_grad:
                parent.grad += g
    return tape
