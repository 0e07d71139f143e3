"""Tensor and tape-based graph for reverse-mode differentiation.

Operations append nodes to the thread's active :class:`Graph`. ``backward``
walks that tape once in reverse append order and then releases it: a graph
supports exactly one backward pass, and a second call raises
:class:`GraphError`. Leaf gradients accumulate across separate graphs until
``zero_grad`` is called, the usual optimizer-loop contract.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, GraphError, InputError

ShapeError = ConfigurationError


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple
    backward: BackwardFn


class Graph:
    """Append-only record of the operations applied since the last backward."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.released = False

    def record(self, op: str, inputs: tuple, backward: BackwardFn) -> int:
        if self.released:
            raise GraphError("cannot record onto a released graph")
        self.nodes.append(Node(op, inputs, backward))
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def current_graph() -> Graph:
    g = getattr(_local, "graph", None)
    if g is None or g.released:
        g = Graph()
        _local.graph = g
    return g


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Run operations without recording them (inference, evaluation)."""
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """Dense float64 array that may participate in the active graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise InputError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.graph: Graph | None = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, graph: Graph, node_id: int) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = True
        t.node_id = node_id
        t.graph = graph
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(op: str, data: np.ndarray, inputs: tuple, backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as an op output, recording a node when any input needs grads."""
    if not grad_enabled() or not any(t.requires_grad for t in inputs):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.node_id = None
        out.graph = None
        out.name = None
        return out
    g = current_graph()
    for t in inputs:
        if t.node_id is not None and t.graph is not g:
            raise GraphError(
                f"input to '{op}' belongs to a released graph; call detach() to reuse its value"
            )
    return Tensor._from_op(data, g, g.record(op, inputs, backward_fn))


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    seed = np.ones_like(loss.data)
    if loss.node_id is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    g = loss.graph
    if g.released:
        raise GraphError("graph already consumed by a previous backward pass")
    pending: dict[int, np.ndarray] = {loss.node_id: seed}
    for nid in range(loss.node_id, -1, -1):
        gout = pending.pop(nid, None)
        if gout is None:
            continue
        node = g.nodes[nid]
        for t, gi in zip(node.inputs, node.backward(gout)):
            if gi is None or not t.requires_grad:
                continue
            if t.node_id is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            elif t.node_id in pending:
                pending[t.node_id] = pending[t.node_id] + gi
            else:
                pending[t.node_id] = gi
    g.released = True
    g.nodes.clear()
