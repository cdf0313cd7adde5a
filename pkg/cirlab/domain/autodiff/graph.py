"""Reverse-mode differentiation over dense float64 arrays.

Every primitive returns a :class:`Node`. A node only records its parents when
at least one input requires a gradient, so forward passes over frozen
parameters (pool snapshots, evaluation) build no graph at all.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cirlab.lib.exceptions import NonScalarRootError, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence

    from numpy.typing import ArrayLike, NDArray

    Backward = Callable[[NDArray[np.float64]], None]

__all__ = (
    "Node",
    "add",
    "add_bias",
    "backward",
    "concat_rows",
    "constant",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "normalize_rows",
    "parameter",
    "pick",
    "relu",
    "repeat_columns",
    "reshape",
    "rotate90",
    "scale",
    "softmax",
    "sub",
    "sum_sq",
    "take_columns",
    "total",
    "transpose",
)


class Node:
    """A value in the computation graph.

    ``grad`` always has the shape of ``value``; it is only populated for nodes
    that require a gradient and is reset at the start of every backward pass.
    """

    __slots__ = ("_backward", "grad", "name", "op", "parents", "requires_grad", "value")

    def __init__(
        self,
        value: NDArray[np.float64],
        *,
        requires_grad: bool = False,
        name: str | None = None,
        op: str = "leaf",
        parents: tuple[Node, ...] = (),
        backward_fn: Backward | None = None,
    ) -> None:
        self.value = value
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.parents = parents
        self._backward = backward_fn
        self.grad: NDArray[np.float64] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    def __add__(self, other: Node) -> Node:
        return add(self, other)

    def __sub__(self, other: Node) -> Node:
        return sub(self, other)

    def __mul__(self, other: Node) -> Node:
        return mul(self, other)

    def __matmul__(self, other: Node) -> Node:
        return matmul(self, other)

    def __neg__(self) -> Node:
        return scale(self, -1.0)


def _as_array(data: ArrayLike) -> NDArray[np.float64]:
    return np.array(data, dtype=np.float64, copy=True)


def constant(data: ArrayLike) -> Node:
    value = _as_array(data)
    value.flags.writeable = False
    return Node(value, op="const")


def parameter(data: NDArray[np.float64], name: str | None = None) -> Node:
    """Wrap a parameter array as a differentiable leaf.

    The array is not copied; optimizer steps applied to it are visible to the
    next forward pass that wraps it again.
    """
    if data.dtype != np.float64:
        msg = f"parameter '{name}' must be float64, got {data.dtype}"
        raise TypeError(msg)
    return Node(data, requires_grad=True, name=name)


def _result(
    value: NDArray[np.float64],
    op: str,
    parents: Sequence[Node],
    backward_fn: Backward,
) -> Node:
    # 0-d results of numpy arithmetic come back as scalars, not arrays
    value = np.asarray(value, dtype=np.float64)
    value.flags.writeable = False
    if not any(parent.requires_grad for parent in parents):
        return Node(value, op=op)
    return Node(value, op=op, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn)


def _accumulate(node: Node, grad: NDArray[np.float64]) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += grad


def _same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)


def add(a: Node, b: Node) -> Node:
    _same_shape("add", a, b)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad)
        _accumulate(b, grad)

    return _result(a.value + b.value, "add", (a, b), _backward)


def sub(a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad)
        _accumulate(b, -grad)

    return _result(a.value - b.value, "sub", (a, b), _backward)


def mul(a: Node, b: Node) -> Node:
    _same_shape("mul", a, b)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad * b.value)
        _accumulate(b, grad * a.value)

    return _result(a.value * b.value, "mul", (a, b), _backward)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad @ b.value.T)
        _accumulate(b, a.value.T @ grad)

    return _result(a.value @ b.value, "matmul", (a, b), _backward)


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeMismatchError("transpose", a.shape, ())

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad.T)

    return _result(np.ascontiguousarray(a.value.T), "transpose", (a,), _backward)


def relu(a: Node) -> Node:
    mask = a.value > 0

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad * mask)

    return _result(np.where(mask, a.value, 0.0), "relu", (a,), _backward)


def log_softmax(a: Node) -> Node:
    """Row-wise log-softmax of a 2-D array."""
    if a.value.ndim != 2:
        raise ShapeMismatchError("log_softmax", a.shape, ())
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad - probs * grad.sum(axis=1, keepdims=True))

    return _result(out, "log_softmax", (a,), _backward)


def softmax(a: Node) -> Node:
    """Row-wise softmax of a 2-D array."""
    if a.value.ndim != 2:
        raise ShapeMismatchError("softmax", a.shape, ())
    weights = np.exp(a.value - a.value.max(axis=1, keepdims=True))
    out = weights / weights.sum(axis=1, keepdims=True)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, out * (grad - np.sum(grad * out, axis=1, keepdims=True)))

    return _result(out, "softmax", (a,), _backward)


def mean(a: Node) -> Node:
    size = a.value.size

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, np.full_like(a.value, grad.reshape(-1)[0] / size))

    return _result(np.array(a.value.mean()), "mean", (a,), _backward)


def total(a: Node) -> Node:
    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, np.full_like(a.value, grad.reshape(-1)[0]))

    return _result(np.array(a.value.sum()), "sum", (a,), _backward)


def sum_sq(a: Node) -> Node:
    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, 2.0 * grad.reshape(-1)[0] * a.value)

    return _result(np.array(np.sum(a.value * a.value)), "sum_sq", (a,), _backward)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, factor * grad)

    return _result(factor * a.value, "scale", (a,), _backward)


def add_bias(x: Node, bias: Node) -> Node:
    """Add a length-n bias to every row of a B×n array."""
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeMismatchError("add_bias", x.shape, bias.shape)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(x, grad)
        _accumulate(bias, grad.sum(axis=0))

    return _result(x.value + bias.value, "add_bias", (x, bias), _backward)


def take_columns(x: Node, columns: Sequence[int]) -> Node:
    index = np.asarray(columns, dtype=np.intp)
    if x.value.ndim != 2 or (index.size and (index.min() < 0 or index.max() >= x.shape[1])):
        raise ShapeMismatchError("take_columns", x.shape, (int(index.size),))

    def _backward(grad: NDArray[np.float64]) -> None:
        full = np.zeros_like(x.value)
        np.add.at(full, (slice(None), index), grad)
        _accumulate(x, full)

    return _result(np.ascontiguousarray(x.value[:, index]), "take_columns", (x,), _backward)


def pick(x: Node, indices: Sequence[int]) -> Node:
    """Select ``x[i, indices[i]]`` for every row; returns a length-B vector."""
    index = np.asarray(indices, dtype=np.intp)
    if x.value.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeMismatchError("pick", x.shape, tuple(index.shape))
    rows = np.arange(x.shape[0])

    def _backward(grad: NDArray[np.float64]) -> None:
        full = np.zeros_like(x.value)
        full[rows, index] = grad
        _accumulate(x, full)

    return _result(x.value[rows, index].copy(), "pick", (x,), _backward)


def repeat_columns(v: Node, width: int) -> Node:
    """Broadcast a length-B vector to a B×width array."""
    if v.value.ndim != 1:
        raise ShapeMismatchError("repeat_columns", v.shape, (width,))

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(v, grad.sum(axis=1))

    return _result(np.repeat(v.value[:, None], width, axis=1), "repeat_columns", (v,), _backward)


def concat_rows(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError("concat_rows", a.shape, b.shape)
    split = a.shape[0]

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(a, grad[:split])
        _accumulate(b, grad[split:])

    return _result(np.concatenate([a.value, b.value], axis=0), "concat_rows", (a, b), _backward)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    if int(np.prod(shape)) != x.value.size:
        raise ShapeMismatchError("reshape", x.shape, shape)

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(x, grad.reshape(x.shape))

    return _result(x.value.reshape(shape).copy(), "reshape", (x,), _backward)


def normalize_rows(x: Node, epsilon: float = 1e-12) -> Node:
    """Scale every row of a 2-D array to unit L2 norm."""
    if x.value.ndim != 2:
        raise ShapeMismatchError("normalize_rows", x.shape, ())
    norms = np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True)) + epsilon
    out = x.value / norms

    def _backward(grad: NDArray[np.float64]) -> None:
        _accumulate(x, (grad - out * np.sum(grad * out, axis=1, keepdims=True)) / norms)

    return _result(out, "normalize_rows", (x,), _backward)


def rotate90(images: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """Rotate the last two axes counter-clockwise by ``90·k`` degrees.

    An input transform only; it never takes part in differentiation.
    """
    if images.ndim < 2 or images.shape[-1] != images.shape[-2]:
        raise ShapeMismatchError("rotate90", tuple(images.shape), ())
    return np.ascontiguousarray(np.rot90(images, k=k % 4, axes=(-2, -1)))


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        stack.extend((parent, False) for parent in node.parents if id(parent) not in visited)
    return order


def _release(nodes: Iterable[Node]) -> None:
    for node in nodes:
        if node.parents:
            node.parents = ()
            node._backward = None


def backward(root: Node, wrt: Mapping[str, Node] | None = None) -> dict[str, NDArray[np.float64]]:
    """Propagate ``d root / d leaf`` into every reachable leaf's ``grad``.

    Args:
        root: scalar node to differentiate.
        wrt: named leaves whose gradients are returned. Leaves the root does
            not depend on get zero gradients.

    Returns:
        Mapping of leaf name to a copy of its gradient.

    Raises:
        NonScalarRootError: ``root`` holds more than one value.
    """
    if root.value.size != 1:
        raise NonScalarRootError(detail=f"backward requires a scalar root, got shape {root.shape}")
    order = _topological_order(root)
    for node in order:
        if node.requires_grad:
            node.grad = np.zeros_like(node.value)
    if wrt is not None:
        for leaf in wrt.values():
            leaf.grad = np.zeros_like(leaf.value)
    if root.requires_grad:
        root.grad = np.ones_like(root.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    _release(order)
    if wrt is None:
        return {}
    return {
        name: leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value) for name, leaf in wrt.items()
    }
