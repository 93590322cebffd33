"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Only the operations the ECNU-GNN forward pass needs are provided. Each op
returns a new :class:`Tensor` that remembers its parents and a closure that
pushes the output adjoint back to them. :func:`backward` orders the recorded
graph topologically (the tape), replays it in reverse once, and then releases
every intermediate so only leaf tensors keep their gradients.

Forward matrix products go through ``numpy.einsum`` rather than BLAS: BLAS
kernels change their reduction order with the row count, which would make a
batched forward pass differ bitwise from a per-window one.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "matmul",
    "add",
    "relu",
    "concat",
    "gather_rows",
    "segment_sum",
    "mse",
    "backward",
    "build_tape",
    "zero_grads",
]


class Tensor:
    """Dense array with an optional accumulated gradient.

    Args:
        data: array-like, converted to a float64 ndarray.
        requires_grad: whether gradients should be accumulated into ``grad``.
        name: optional label used in error messages and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.einsum("ik,kj->ij", a.data, b.data)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(out, (a, b), _bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over the rows of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        broadcast = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        broadcast = True
    else:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = a.data + b.data

    def _bw(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0) if broadcast else g)

    return _result(out, (a, b), _bw)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def _bw(g):
        _accumulate(a, g * mask)

    return _result(out, (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the adjoint back."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0].shape
    ndim = len(ref)
    if not -ndim <= axis < ndim:
        raise DimensionError(f"concat axis {axis} out of range for {ndim}-d tensors")
    axis %= ndim
    for t in tensors[1:]:
        if len(t.shape) != ndim or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise DimensionError(
                f"concat shapes differ off axis {axis}: {[t.shape for t in tensors]}"
            )
    if len(tensors) == 1:
        only = tensors[0]
        return _result(only.data.copy(), (only,), lambda g: _accumulate(only, g))
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * ndim
                index[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(index)])

    return _result(out, tuple(tensors), _bw)


def _index_array(indices, bound: int, what: str) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        bad = idx[(idx < 0) | (idx >= bound)][0]
        raise IndexError(f"{what} {bad} out of range for size {bound}")
    return idx


def gather_rows(table: Tensor, indices: Iterable[int]) -> Tensor:
    """Select rows of a 2-D table; duplicate indices accumulate on the way back."""
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D table, got {table.shape}")
    idx = _index_array(indices, table.shape[0], "row index")
    out = table.data[idx]

    def _bw(g):
        _accumulate(table, _scatter_rows(idx, g, table.shape[0]))

    return _result(out, (table,), _bw)


def _segment_order(values: np.ndarray, seg: np.ndarray) -> np.ndarray:
    # Canonical order: by segment, then by row contents. The result therefore
    # does not depend on how (value, segment) pairs were arranged on input.
    if values.shape[1] == 0:
        return np.argsort(seg, kind="stable")
    order = np.lexsort((values[:, 0], seg))
    s, v = seg[order], values[order]
    tied = (s[1:] == s[:-1]) & (v[1:, 0] == v[:-1, 0])
    if not tied.any() or np.array_equal(v[1:][tied], v[:-1][tied]):
        # rows equal in the first column are fully equal, so their
        # relative order cannot change the sum
        return order
    keys = [values[:, c] for c in range(values.shape[1] - 1, -1, -1)]
    keys.append(seg)
    return np.lexsort(keys)


def _scatter_rows(idx: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    # Sum rows sharing an index in their original order (stable sort), so the
    # result is deterministic and matches sequential accumulation.
    out = np.zeros((n,) + rows.shape[1:])
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def segment_sum(values: Tensor, segments: Iterable[int], n_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``n_segments`` buckets given by ``segments``.

    Rows are reduced in a canonical order (segment-major, then lexicographic
    by row value) so the output is bitwise independent of input row order.
    Empty segments produce zero rows.
    """
    values = _as_tensor(values)
    if values.data.ndim != 2:
        raise DimensionError(f"segment_sum expects 2-D values, got {values.shape}")
    seg = _index_array(segments, n_segments, "segment id")
    if seg.shape[0] != values.shape[0]:
        raise DimensionError(
            f"segment_sum: {seg.shape[0]} segment ids for {values.shape[0]} rows"
        )
    out = np.zeros((n_segments, values.shape[1]))
    if seg.size:
        order = _segment_order(values.data, seg)
        sorted_seg = seg[order]
        starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
        out[sorted_seg[starts]] = np.add.reduceat(values.data[order], starts, axis=0)

    def _bw(g):
        _accumulate(values, g[seg])

    return _result(out, (values,), _bw)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all elements (a scalar tensor)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.array(np.mean(diff * diff))

    def _bw(g):
        scale = 2.0 * g / count
        _accumulate(pred, scale * diff)
        if target.requires_grad:
            _accumulate(target, -scale * diff)

    return _result(out, (pred, target), _bw)


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of every tensor reachable from ``root``.

    Each node appears exactly once; inputs precede the ops that consume them.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The graph hanging off ``loss`` is consumed: intermediates drop their
    parents, closures and adjoints afterwards.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        if node.is_leaf or node.grad is None:
            continue
        node._backward(node.grad)
    for node in tape:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node.grad = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
