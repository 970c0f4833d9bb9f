"""
Dense arrays with reverse-mode differentiation.

Every op applied while a Graph is active, with at least one tracked input,
is appended to that Graph. Graph.backward replays the recorded nodes in
reverse and accumulates gradients into the tracked leaves (parameters and
inputs created with requires_grad=True).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import GraphError, ShapeError

_DTYPES = {"single": np.float32, "double": np.float64}
_local = threading.local()


def get_dtype() -> type:
    """Current default float type (thread-local override, else settings)."""
    override = getattr(_local, "dtype", None)
    return override if override is not None else _DTYPES[settings.PRECISION]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Switch the default float type inside the block ('single' or 'double')."""
    previous = getattr(_local, "dtype", None)
    _local.dtype = _DTYPES[name]
    try:
        yield
    finally:
        _local.dtype = previous


def _graph_stack() -> list:
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class DenseArray:
    """
    N-dimensional array over a contiguous numpy buffer.

    `requires_grad` marks leaves whose gradient is wanted; outputs of recorded
    ops inherit it. Arrays are never mutated in place once produced by an op.
    """

    __array_ufunc__ = None  # numpy scalars defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_dtype())
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.size == 0:
            raise ShapeError(f"array extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # ---- properties ----
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def strides(self) -> tuple[int, ...]:
        """Row-major strides in elements."""
        return tuple(s // self.data.itemsize for s in self.data.strides)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "DenseArray":
        return DenseArray(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"DenseArray(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---- operators (implemented in app.tensor.ops) ----
    def __add__(self, other):
        from app.tensor import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.tensor import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.tensor import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.tensor import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.tensor import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from app.tensor import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from app.tensor import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from app.tensor import ops
        return ops.div(other, self)

    def __neg__(self):
        from app.tensor import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from app.tensor import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from app.tensor import ops
        return ops.index(self, index)

    def reshape(self, *shape):
        from app.tensor import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from app.tensor import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from app.tensor import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from app.tensor import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class Node:
    """One recorded op: its kind, inputs, output and the vector-Jacobian product."""

    kind: str
    inputs: tuple[DenseArray, ...]
    output: DenseArray
    backward_fn: BackwardFn
    graph: "Graph"


class Graph:
    """
    Tape of recorded ops. Use as a context manager to enable recording:

        with Graph() as graph:
            loss = model(x)
        graph.backward(loss)

    A graph can be consumed by backward exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _graph_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @staticmethod
    @contextmanager
    def suspend() -> Iterator[None]:
        """Run the block without recording, even inside an active graph."""
        stack = _graph_stack()
        stack.append(None)
        try:
            yield
        finally:
            stack.pop()

    def record(self, kind: str, inputs: tuple[DenseArray, ...], output: DenseArray, backward_fn: BackwardFn) -> None:
        if self.consumed:
            raise GraphError(f"cannot record '{kind}' on a consumed graph")
        node = Node(kind, inputs, output, backward_fn, self)
        output._node = node
        self.nodes.append(node)

    def backward(self, loss: DenseArray) -> None:
        """Accumulate d(loss)/d(leaf) into every tracked leaf reachable from loss."""
        if self.consumed:
            raise GraphError("graph already consumed by a previous backward pass")
        if loss.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node.graph is not self:
            raise GraphError("loss was not produced under this graph")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, DenseArray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeError(f"{node.kind}: gradient shape {gi.shape} does not match input {inp.shape}")
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
                if inp._node is None or inp._node.graph is not self:
                    leaves[key] = inp

        for key, leaf in leaves.items():
            g = np.asarray(grads[key], dtype=leaf.data.dtype)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

        self.consumed = True
        for node in self.nodes:
            if node.output is not loss:
                node.output._node = None
        loss._node.inputs = ()
        self.nodes.clear()


def backward(loss: DenseArray) -> None:
    """Backward through the graph that produced `loss`."""
    if loss._node is None:
        raise GraphError("loss has no recorded history; compute it inside `with Graph():`")
    loss._node.graph.backward(loss)
