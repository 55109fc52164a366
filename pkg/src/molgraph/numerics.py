"""Dense rank-2 tensors with reverse-mode gradient accumulation.

Tensors are immutable after construction; each operation records a backward
closure, and ``backward`` replays them in reverse topological (insertion)
order, which keeps gradient accumulation bit-reproducible. float64 is meant
for tests and gradient checks, float32 for training and checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class GraphCycle(RuntimeError):
    """Unreachable by construction (graphs are built append-only); kept for API."""


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 parents: tuple = (), backward_fn: Optional[Callable] = None):
        self.data = data
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLoss(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    """Checked constructor: rejects NaN/Inf payloads."""
    arr = np.asarray(data, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor payload contains NaN or Inf")
    return Tensor(arr, requires_grad=requires_grad)


def _result(data: np.ndarray, parents: tuple[Tensor, ...],
            backward_fn: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None)


def _check_same_or_row(a: Tensor, b: Tensor, op: str) -> bool:
    """True when b broadcasts across a's rows (bias add); raises on misfit."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def add(a: Tensor, b: Tensor) -> Tensor:
    row_broadcast = _check_same_or_row(a, b, "add")
    out = a.data + b.data

    def backward_fn(grad, sink):
        sink(a, grad)
        sink(b, grad.sum(axis=0) if row_broadcast else grad)

    return _result(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    row_broadcast = _check_same_or_row(a, b, "sub")
    out = a.data - b.data

    def backward_fn(grad, sink):
        sink(a, grad)
        sink(b, -(grad.sum(axis=0) if row_broadcast else grad))

    return _result(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    row_broadcast = _check_same_or_row(a, b, "mul")
    out = a.data * b.data

    def backward_fn(grad, sink):
        sink(a, grad * b.data)
        gb = grad * a.data
        sink(b, gb.sum(axis=0) if row_broadcast else gb)

    return _result(out, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward_fn(grad, sink):
        sink(a, grad * c)

    return _result(a.data * c, (a,), backward_fn)


def add_const(a: Tensor, c: float) -> Tensor:
    def backward_fn(grad, sink):
        sink(a, grad)

    return _result(a.data + float(c), (a,), backward_fn)


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable scalar tensor."""
    if s.data.size != 1:
        raise ShapeMismatch(f"scale_by: scale has shape {s.shape}, not scalar")
    sval = s.data.reshape(-1)[0]
    out = a.data * sval

    def backward_fn(grad, sink):
        sink(a, grad * sval)
        sink(s, np.array([(grad * a.data).sum()], dtype=a.data.dtype).reshape(s.shape))

    return _result(out, (a, s), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def backward_fn(grad, sink):
        sink(a, grad @ b.data.T)
        sink(b, a.data.T @ grad)

    return _result(out, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    def backward_fn(grad, sink):
        sink(a, grad.T)

    return _result(a.data.T, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def backward_fn(grad, sink):
        sink(a, grad * mask)

    return _result(out, (a,), backward_fn)


def row_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"row_softmax: expected rank 2, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward_fn(grad, sink):
        inner = (grad * out).sum(axis=1, keepdims=True)
        sink(a, (grad - inner) * out)

    return _result(out, (a,), backward_fn)


def row_log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"row_log_softmax: expected rank 2, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_z
    soft = np.exp(out)

    def backward_fn(grad, sink):
        sink(a, grad - soft * grad.sum(axis=1, keepdims=True))

    return _result(out, (a,), backward_fn)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeMismatch("concat_rows: no tensors given")
    width = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != width:
            raise ShapeMismatch(
                f"concat_rows: widths differ ({p.shape} vs (*, {width}))")
    out = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward_fn(grad, sink):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sink(p, grad[lo:hi])

    return _result(out, parts, backward_fn)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeMismatch("concat_cols: no tensors given")
    height = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != height:
            raise ShapeMismatch(
                f"concat_cols: heights differ ({p.shape} vs ({height}, *))")
    out = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward_fn(grad, sink):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sink(p, grad[:, lo:hi])

    return _result(out, parts, backward_fn)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[start:stop]

    def backward_fn(grad, sink):
        full = np.zeros_like(a.data)
        full[start:stop] = grad
        sink(a, full)

    return _result(out, (a,), backward_fn)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data[idx]

    def backward_fn(grad, sink):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, grad)
        sink(a, full)

    return _result(out, (a,), backward_fn)


def pick(a: Tensor, rows, cols) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape:
        raise ShapeMismatch(f"pick: index shapes {rows.shape} vs {cols.shape}")
    out = a.data[rows, cols]

    def backward_fn(grad, sink):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), grad)
        sink(a, full)

    return _result(out, (a,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    out = np.array(a.data.sum(), dtype=a.data.dtype)

    def backward_fn(grad, sink):
        sink(a, np.full_like(a.data, float(grad)))

    return _result(out, (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array(a.data.sum() / n, dtype=a.data.dtype)

    def backward_fn(grad, sink):
        sink(a, np.full_like(a.data, float(grad) / n))

    return _result(out, (a,), backward_fn)


# -- parameter store -------------------------------------------------------


class ParameterStore:
    """Named, shaped tensors with trainable flags; the checkpointing unit."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, data, trainable: bool = True,
            dtype=np.float64) -> Tensor:
        if name in self._entries:
            raise ValueError(f"parameter {name!r} already exists")
        t = tensor(data, requires_grad=trainable, dtype=dtype)
        self._entries[name] = t
        self._trainable[name] = trainable
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def get(self, name: str) -> Optional[Tensor]:
        return self._entries.get(name)

    def remove(self, name: str):
        del self._entries[name]
        del self._trainable[name]

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> list[tuple[str, Tensor, bool]]:
        return [(n, t, self._trainable[n]) for n, t in self._entries.items()]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_names(self) -> list[str]:
        return [n for n, f in self._trainable.items() if f]

    def set_trainable(self, name: str, flag: bool):
        self._trainable[name] = flag
        self._entries[name].requires_grad = flag

    def freeze_prefix(self, prefix: str):
        for n in self._entries:
            if n.startswith(prefix):
                self.set_trainable(n, False)

    def unfreeze_prefix(self, prefix: str):
        for n in self._entries:
            if n.startswith(prefix):
                self.set_trainable(n, True)

    def set_data(self, name: str, data: np.ndarray):
        """Replace values in place; the shape is immutable."""
        t = self._entries[name]
        arr = np.asarray(data, dtype=t.data.dtype)
        if arr.shape != t.data.shape:
            raise ShapeMismatch(
                f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
        t.data = arr

    def clone(self) -> "ParameterStore":
        out = ParameterStore()
        for n, t, flag in self.items():
            out.add(n, t.data.copy(), trainable=flag, dtype=t.data.dtype)
        return out


def backward(loss: Tensor, store: ParameterStore) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every trainable store entry.

    Entries unreachable from the loss get zero tensors; frozen entries are
    omitted entirely.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def sink(t: Tensor, g: np.ndarray):
        if not t.requires_grad:
            return
        slot = grads.get(id(t))
        if slot is None:
            grads[id(t)] = np.array(g, dtype=t.data.dtype, copy=True).reshape(t.data.shape)
        else:
            slot += g.reshape(t.data.shape)

    for node in reversed(order):
        if node._backward_fn is None:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        node._backward_fn(g, sink)

    out: dict[str, np.ndarray] = {}
    for name, t, trainable in store.items():
        if not trainable:
            continue
        out[name] = grads.get(id(t), np.zeros_like(t.data))
    return out


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_rel_err: float
    passed: bool


def finite_difference_check(
    f: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    step: float = 1e-6,
    tolerance: float = 1e-4,
) -> list[GradCheckReport]:
    """Central-difference audit of ``backward`` for every trainable entry.

    Per-element error is |analytic - numeric| / max(|analytic|, |numeric|, 1),
    so tiny gradients are judged absolutely and large ones relatively. Frozen
    entries never appear in the report. Failures are reported, not raised.
    """
    analytic = backward(f(store), store)
    reports = []
    for name in store.trainable_names():
        t = store[name]
        worst = 0.0
        for i in range(t.data.size):
            orig = t.data.flat[i]
            t.data.flat[i] = orig + step
            f_plus = f(store).item()
            t.data.flat[i] = orig - step
            f_minus = f(store).item()
            t.data.flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name].reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
        reports.append(GradCheckReport(name, worst, worst < tolerance))
    return reports
