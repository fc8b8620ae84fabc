"""Minimal dense-array forward ops with reverse-mode automatic differentiation.

Everything is float64. Each op validates its input shapes, computes the
forward value with numpy, and (when gradient tracking is active) attaches an
``OpRecord`` to the output tensor. The records reachable from an output form
an acyclic computation record; ``backward`` walks it once in reverse
topological order and returns one gradient array per requested input.

A record belongs to the computation that built it: independent computations
never share records, so callers may run many of them concurrently as long as
each owns its own. ``no_grad`` disables recording on the current thread for
pure-inference passes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "OpRecord",
    "ShapeMismatchError",
    "NonFiniteError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "mean_axis",
    "sum_all",
    "embedding",
    "softmax",
    "log_softmax",
    "tanh",
    "log_clamped",
]


class ShapeMismatchError(ValueError):
    """An op received tensors whose shapes do not conform."""

    def __init__(self, op: str, shapes: Sequence[tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = tuple(shapes)
        msg = f"{op}: incompatible shapes {list(self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArithmeticError):
    """A tensor value became NaN or infinite."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced or received non-finite values")


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable gradient recording on this thread for the enclosed block."""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class OpRecord:
    """One executed primitive: its name, input tensors, and the local rule
    mapping the output adjoint to one adjoint per input (None = not
    differentiable through that slot)."""

    __slots__ = ("op", "inputs", "grad_fn")

    def __init__(
        self,
        op: str,
        inputs: tuple["Tensor", ...],
        grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
    ):
        self.op = op
        self.inputs = inputs
        self.grad_fn = grad_fn


class Tensor:
    """A float64 array plus the op record that produced it (None for leaves).

    Scalars are stored as shape-(1,) arrays; every tensor holds at least one
    element and only finite values.
    """

    __slots__ = ("values", "requires_grad", "record")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeMismatchError("tensor", [arr.shape], "tensors must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor")
        self.values = arr
        self.requires_grad = requires_grad
        self.record: OpRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _finish(
    op: str,
    values: np.ndarray,
    inputs: tuple[Tensor, ...],
    grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(op)
    out = Tensor(values)
    if _grad_enabled() and any(t.requires_grad or t.record is not None for t in inputs):
        out.record = OpRecord(op, inputs, grad_fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, [a.shape, b.shape], "operands must match elementwise")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _require_same_shape("add", a, b)
    return _finish("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference of two same-shape tensors."""
    _require_same_shape("sub", a, b)
    return _finish("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _require_same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _finish("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a plain (non-differentiated) scalar."""
    c = float(factor)
    if not np.isfinite(c):
        raise NonFiniteError("scale")
    return _finish("scale", a.values * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,k)@(k,n) -> (m,n) or (m,k)@(k,) -> (m,)."""
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError("matmul", [av.shape, bv.shape])
    if bv.ndim == 1:
        grad_fn = lambda g: (np.outer(g, bv), av.T @ g)
    else:
        grad_fn = lambda g: (g @ bv.T, av.T @ g)
    return _finish("matmul", av @ bv, (a, b), grad_fn)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    if not parts:
        raise ShapeMismatchError("concat", [], "needs at least one input")
    for p in parts:
        if p.values.ndim != 1:
            raise ShapeMismatchError("concat", [p.shape for p in parts], "inputs must be 1-D")
    sizes = [p.values.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(sizes)))

    return _finish("concat", np.concatenate([p.values for p in parts]), tuple(parts), grad_fn)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Mean of a 2-D tensor over one axis, yielding a vector."""
    if a.values.ndim != 2 or axis not in (0, 1):
        raise ShapeMismatchError("mean_axis", [a.shape], f"needs a 2-D input, axis 0 or 1, got axis {axis}")
    n = a.shape[axis]
    shape = a.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _finish("mean_axis", a.values.mean(axis=axis), (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a 1-element tensor."""
    shape = a.shape
    return _finish(
        "sum_all",
        np.asarray([a.values.sum()]),
        (a,),
        lambda g: (np.full(shape, g.reshape(-1)[0]),),
    )


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D table by token id; gradient scatter-adds back."""
    if table.values.ndim != 2:
        raise ShapeMismatchError("embedding", [table.shape], "table must be 2-D")
    idx = np.asarray(list(ids), dtype=np.intp)
    if idx.size == 0:
        raise ShapeMismatchError("embedding", [table.shape], "empty id sequence")
    rows = table.values.shape[0]
    if idx.min() < 0 or idx.max() >= rows:
        bad = int(idx[(idx < 0) | (idx >= rows)][0])
        raise ValueError(f"embedding: id {bad} out of range for table with {rows} rows")
    tshape = table.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        gt = np.zeros(tshape)
        np.add.at(gt, idx, g)
        return (gt,)

    return _finish("embedding", table.values[idx], (table,), grad_fn)


def softmax(a: Tensor) -> Tensor:
    """Stable softmax of a vector; output lies on the probability simplex."""
    if a.values.ndim != 1:
        raise ShapeMismatchError("softmax", [a.shape], "needs a 1-D input")
    shifted = np.exp(a.values - a.values.max())
    s = shifted / shifted.sum()

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (s * (g - np.dot(g, s)),)

    return _finish("softmax", s, (a,), grad_fn)


def log_softmax(a: Tensor) -> Tensor:
    """log(softmax(a)) computed stably."""
    if a.values.ndim != 1:
        raise ShapeMismatchError("log_softmax", [a.shape], "needs a 1-D input")
    shifted = a.values - a.values.max()
    logz = np.log(np.exp(shifted).sum())
    out = shifted - logz
    s = np.exp(out)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (g - s * g.sum(),)

    return _finish("log_softmax", out, (a,), grad_fn)


def tanh(a: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    t = np.tanh(a.values)
    return _finish("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Elementwise log(max(a, floor)); the gradient is zero where clamped."""
    if floor <= 0.0:
        raise ValueError(f"log_clamped: floor must be positive, got {floor}")
    av = a.values
    clamped = np.maximum(av, floor)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (np.where(av > floor, g / clamped, 0.0),)

    return _finish("log_clamped", np.log(clamped), (a,), grad_fn)


def backward(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar output with respect to each tensor in ``wrt``.

    Walks the computation record reachable from ``output`` once, in reverse
    topological order, accumulating adjoints. Inputs with no path to the
    output get a zero gradient (the frozen-parameter case), not an error.
    The walk order is fixed by the recording order, so identical records
    yield bit-identical gradients.
    """
    if output.values.size != 1:
        raise ValueError(f"backward: output must be a 1-element tensor, got shape {output.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, children_done = stack.pop()
        if children_done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.record is not None:
            for parent in node.record.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))

    adjoints: dict[int, np.ndarray] = {id(output): np.ones_like(output.values)}
    for node in reversed(topo):
        rec = node.record
        if rec is None:
            continue
        out_adj = adjoints.get(id(node))
        if out_adj is None:
            continue
        for parent, grad in zip(rec.inputs, rec.grad_fn(out_adj)):
            if grad is None:
                continue
            pid = id(parent)
            if pid in adjoints:
                adjoints[pid] = adjoints[pid] + grad
            else:
                adjoints[pid] = grad

    return [adjoints.get(id(t), np.zeros_like(t.values)) for t in wrt]
