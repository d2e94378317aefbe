"""Dense tensors with a recorded tape for reverse-mode differentiation.

A :class:`Tensor` wraps an immutable row-major numpy buffer. Applying a
primitive while gradients are enabled records a :class:`Node` holding the
operation name, the input nodes, and a closure that maps the output
cotangent to input cotangents. Node ids increase monotonically with
creation, so creation order is a topological order of the graph;
``backward`` linearizes the nodes reachable from the loss into a
:class:`Tape` and replays it in reverse.

Float32 and float64 are the only supported dtypes. A module-level debug
flag makes every primitive verify its output is finite and raise
:class:`~rdpnet.errors.NonFiniteError` naming the first offending index;
the check is off by default for speed.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
DEFAULT_DTYPE = np.dtype(np.float64)

_node_ids = itertools.count()
_grad_enabled = True
_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Globally enable/disable per-primitive NaN/Inf detection."""
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


@contextmanager
def finite_checks(enabled: bool = True):
    global _finite_checks
    prev = _finite_checks
    _finite_checks = bool(enabled)
    try:
        yield
    finally:
        _finite_checks = prev


@contextmanager
def no_grad():
    """Suppress tape recording inside the block (eval / scoring paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _as_supported(arr: np.ndarray, dtype=None) -> np.ndarray:
    if dtype is not None:
        arr = arr.astype(np.dtype(dtype), copy=False)
    if arr.dtype not in SUPPORTED_DTYPES:
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


def _c_contiguous(arr: np.ndarray) -> np.ndarray:
    """Row-major copy if needed; unlike ascontiguousarray, keeps 0-d rank."""
    return arr if arr.flags["C_CONTIGUOUS"] else arr.copy(order="C")


class Node:
    """One recorded primitive application (or a tracked leaf)."""

    __slots__ = ("id", "op", "inputs", "backward_fn", "leaf")

    def __init__(
        self,
        op: str,
        inputs: tuple[Optional["Node"], ...],
        backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]],
        leaf: Optional["Tensor"] = None,
    ):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.leaf = leaf


class Tensor:
    """Immutable dense value array, optionally participating in differentiation."""

    __slots__ = ("data", "node", "grad")

    def __init__(self, data, dtype=None, tracked: bool = False):
        arr = np.array(data, dtype=np.dtype(dtype) if dtype is not None else None, order="C")
        arr = _as_supported(arr)
        arr.setflags(write=False)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.node = Node("leaf", (), None, leaf=self) if tracked else None

    @classmethod
    def _wrap(cls, data: np.ndarray, node: Optional[Node] = None) -> "Tensor":
        """Internal constructor: takes ownership of ``data`` without copying."""
        out = cls.__new__(cls)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out.node = node
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        return self.data

    def _set_data(self, arr: np.ndarray) -> None:
        """Swap the buffer (parameter updates / initialization).

        Callers must guarantee no live graph still needs the old values;
        the old array itself is never mutated, so previously recorded
        closures stay valid.
        """
        if arr.shape != self.data.shape or arr.dtype != self.data.dtype:
            raise ShapeError(
                f"replacement buffer {arr.shape}/{arr.dtype} does not match "
                f"tensor {self.shape}/{self.dtype}"
            )
        arr = _c_contiguous(np.asarray(arr))
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        if self.ndim == 0:
            raise ShapeError("len() of a 0-d tensor")
        return self.shape[0]


def tensor(data, dtype=None, tracked: bool = False) -> Tensor:
    return Tensor(data, dtype=dtype, tracked=tracked)


def zeros(shape, dtype=DEFAULT_DTYPE, tracked: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.dtype(dtype)), tracked=tracked)


def ones(shape, dtype=DEFAULT_DTYPE, tracked: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.dtype(dtype)), tracked=tracked)


def full(shape, value, dtype=DEFAULT_DTYPE, tracked: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.dtype(dtype)), tracked=tracked)


def _check_finite(op: str, out: np.ndarray) -> None:
    if np.isfinite(out).all():
        return
    bad = np.argwhere(~np.isfinite(out))
    idx = tuple(int(i) for i in bad[0]) if bad.size else ()
    raise NonFiniteError(f"{op} produced a non-finite value at index {idx}")


def apply_op(
    op: str,
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Record one primitive application and wrap its result."""
    if _finite_checks:
        _check_finite(op, out_data)
    node = None
    if _grad_enabled and any(t.node is not None for t in inputs):
        node = Node(op, tuple(t.node for t in inputs), backward_fn)
    return Tensor._wrap(_c_contiguous(out_data), node)


class Tape:
    """Reachable nodes of a graph, ordered so every node precedes its uses.

    Node ids are assigned at creation time, which already is a topological
    order (a primitive's inputs exist before its output), so tracing is a
    reachability walk plus an id sort.
    """

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes  # descending id: outputs first

    @classmethod
    def trace(cls, root: Node) -> "Tape":
        seen: set[int] = set()
        stack = [root]
        nodes: list[Node] = []
        while stack:
            n = stack.pop()
            if n.id in seen:
                continue
            seen.add(n.id)
            nodes.append(n)
            for inp in n.inputs:
                if inp is not None and inp.id not in seen:
                    stack.append(inp)
        nodes.sort(key=lambda n: n.id, reverse=True)
        return cls(nodes)

    def replay(self, root: Node, seed_grad: np.ndarray) -> None:
        """Accumulate cotangents from root to leaves; deposit on leaf tensors."""
        grads: dict[int, np.ndarray] = {root.id: seed_grad}
        for node in self.nodes:
            g = grads.pop(node.id, None)
            if g is None:
                continue  # not on a path from the root
            if node.backward_fn is None:
                leaf = node.leaf
                contrib = _c_contiguous(g)
                leaf.grad = contrib if leaf.grad is None else leaf.grad + contrib
                continue
            input_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, input_grads):
                if inp is None or gi is None:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else prev + gi


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked leaf reachable from ``loss``.

    Gradients accumulate across calls; clear them between steps. Leaves
    not reachable from the loss are left untouched (grad None reads as
    zero).
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        return
    seed = np.ones(loss.shape, dtype=loss.dtype)
    tape = Tape.trace(loss.node)
    tape.replay(loss.node, seed)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
