"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations compute eagerly with numpy.  While a :class:`Tape` is active and
at least one operand requires gradients, each operation appends a node
holding its parents and a local backward rule.  :func:`backward` walks the
tape in reverse, so every node is visited at most once and gradients from
shared subexpressions accumulate by summation.

The engine is deliberately small: 2-D matmul, broadcasting elementwise
arithmetic, the handful of nonlinearities the multi-exit network needs,
reductions, slicing, and batch normalisation in training mode.  Everything
is 64-bit and single-threaded; one tape may be active at a time.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "astensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "exp",
    "log",
    "pow_const",
    "xlogx",
    "tsum",
    "tmean",
    "concat",
    "narrow",
    "gather_rows",
    "take_per_row",
    "softmax_with_temperature",
    "log_softmax",
    "batch_norm",
]

# Backward rule: maps the output gradient to one gradient (or None) per parent.
GradRule = Callable[[np.ndarray], tuple]


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient slot.

    ``data`` is stored row-major.  ``grad`` is materialised lazily by
    :func:`backward` and always matches ``data`` in shape.  ``node`` points
    at the tape node that produced this tensor, or ``None`` for leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._item_error()

    def _item_error(self):
        raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded operation: parent tensors plus a local backward rule."""

    __slots__ = ("idx", "parents", "rule", "tape")

    def __init__(self, idx: int, parents: tuple[Tensor, ...], rule: GradRule, tape: "Tape"):
        self.idx = idx
        self.parents = parents
        self.rule = rule
        self.tape = tape


class Tape:
    """Append-only record of operations, usable as a context manager.

    Nodes are appended in execution order, so every node's parents precede
    it and a single reverse sweep is a valid topological traversal.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that was not innermost")
        return False

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def astensor(x) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(out: Tensor, parents: tuple[Tensor, ...], rule: GradRule) -> Tensor:
    tape = _active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return out
    out.requires_grad = True
    node = Node(len(tape.nodes), parents, rule, tape)
    tape.nodes.append(node)
    out.node = node
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf with requires_grad.

    ``root`` must hold a single element.  Gradients add into ``leaf.grad``
    without resetting, so repeated calls accumulate.  A root with no
    recorded parents writes nothing.
    """
    root = astensor(root)
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
    start = root.node
    if start is None:
        return
    tape = start.tape
    # Pending gradients keyed by tape index; reverse order guarantees each
    # node is finalised only after all of its consumers contributed.
    pending: dict[int, np.ndarray] = {start.idx: np.ones_like(root.data)}
    for node in reversed(tape.nodes[: start.idx + 1]):
        g = pending.pop(node.idx, None)
        if g is None:
            continue
        parent_grads = node.rule(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            pnode = parent.node
            if pnode is not None and pnode.tape is tape:
                if pnode.idx in pending:
                    pending[pnode.idx] = pending[pnode.idx] + pg
                else:
                    pending[pnode.idx] = pg
            elif parent.requires_grad:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)

    def rule(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("div", a, b)
    out = Tensor(a.data / b.data)

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), rule)


def neg(a) -> Tensor:
    a = astensor(a)
    out = Tensor(-a.data)

    def rule(g):
        return (-g,)

    return _record(out, (a,), rule)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), rule)


def relu(a) -> Tensor:
    a = astensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    def rule(g):
        return (g * mask,)

    return _record(out, (a,), rule)


def exp(a) -> Tensor:
    a = astensor(a)
    out = Tensor(np.exp(a.data))
    out_data = out.data

    def rule(g):
        return (g * out_data,)

    return _record(out, (a,), rule)


def log(a) -> Tensor:
    a = astensor(a)
    if not np.all(a.data > 0):
        raise ValueError("log requires strictly positive inputs")
    out = Tensor(np.log(a.data))

    def rule(g):
        return (g / a.data,)

    return _record(out, (a,), rule)


def pow_const(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent; inputs must be positive."""
    a = astensor(a)
    if not np.all(a.data > 0):
        raise ValueError("pow_const requires strictly positive inputs")
    out = Tensor(a.data ** exponent)

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _record(out, (a,), rule)


def xlogx(a) -> Tensor:
    """Elementwise x*log(x) with the 0*log(0) = 0 convention.

    The backward rule gates zeros, matching the convention rather than the
    (divergent) true one-sided derivative.
    """
    a = astensor(a)
    if np.any(a.data < 0):
        raise ValueError("xlogx requires nonnegative inputs")
    positive = a.data > 0
    safe = np.where(positive, a.data, 1.0)
    out = Tensor(np.where(positive, a.data * np.log(safe), 0.0))

    def rule(g):
        return (g * np.where(positive, np.log(safe) + 1.0, 0.0),)

    return _record(out, (a,), rule)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes (all axes when ``axis`` is None)."""
    a = astensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), rule)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    """Mean over the given axes (all axes when ``axis`` is None)."""
    a = astensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return _record(out, (a,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    parts = tuple(astensor(t) for t in tensors)
    if not parts:
        raise ValueError("concat requires at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, parts, rule)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    a = astensor(a)
    dim = a.shape[axis]
    if start < 0 or length < 0 or start + length > dim:
        raise ValueError(f"narrow: slice [{start}:{start + length}] out of range for axis of size {dim}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index])

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), rule)


def gather_rows(a, indices) -> Tensor:
    """Select rows of a 2-D tensor by integer index (repeats allowed)."""
    a = astensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise ValueError(f"gather_rows requires a 2-D tensor, got shape {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx])

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), rule)


def take_per_row(a, indices) -> Tensor:
    """Pick one entry per row of a 2-D tensor: out[i] = a[i, indices[i]]."""
    a = astensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise ValueError(f"take_per_row requires a 2-D tensor, got shape {a.shape}")
    if idx.shape != (a.shape[0],):
        raise ValueError(f"take_per_row: need one index per row, got {idx.shape} for {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ValueError(f"take_per_row: column index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx])

    def rule(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _record(out, (a,), rule)


def softmax_with_temperature(logits, temperature: float) -> Tensor:
    """Row-wise softmax of logits/temperature over the last axis.

    Computed with max-subtraction; each output row sums to one and the
    result is invariant to adding a constant to a row.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    a = astensor(logits)
    shifted = (a.data - a.data.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data)

    def rule(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - inner) / temperature,)

    return _record(out, (a,), rule)


def log_softmax(logits) -> Tensor:
    """Numerically stable log of the row-wise softmax over the last axis."""
    a = astensor(logits)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    out = Tensor(out_data)

    def rule(g):
        return (g - np.exp(out_data) * g.sum(axis=-1, keepdims=True),)

    return _record(out, (a,), rule)


def batch_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Batch normalisation in training mode over axis 0.

    Uses biased per-feature batch statistics with learnable scale and
    shift.  Built from taped primitives, so the backward pass needs no
    dedicated rule.
    """
    x = astensor(x)
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects a 2-D batch, got shape {x.shape}")
    mu = tmean(x, axis=0)
    centred = sub(x, mu)
    var = tmean(mul(centred, centred), axis=0)
    inv_std = pow_const(add(var, eps), -0.5)
    return add(mul(mul(centred, inv_std), gamma), beta)


LN_2PI = math.log(2.0 * math.pi)
