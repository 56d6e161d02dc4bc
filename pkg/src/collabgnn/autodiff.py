"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while recording is enabled appends
its output to a global tape together with a gradient rule. ``backward``
replays the tape in reverse order and then clears it, so each recorded
graph can be differentiated exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ShapeError, ValidationError

GradRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array that can take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_inputs", "_rule", "_generation", "_position")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._inputs: tuple[Tensor, ...] = ()
        self._rule: GradRule | None = None
        self._generation = -1
        self._position = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def Parameter(data, name: str | None = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Ordered record of operations executed since the last reset."""

    def __init__(self) -> None:
        self.entries: list[Tensor] = []
        self.generation = 0
        self.enabled = True

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: GradRule) -> Tensor:
        if self.enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._inputs = inputs
            out._rule = rule
            out._generation = self.generation
            out._position = len(self.entries)
            self.entries.append(out)
        return out

    def reset(self) -> None:
        for t in self.entries:
            t._inputs = ()
            t._rule = None
        self.entries = []
        self.generation += 1


_TAPE = Tape()


def get_tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    """Drop every recorded operation without computing gradients."""
    _TAPE.reset()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording inside the block."""
    previous = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = previous


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor the loss depends on.

    Leaf gradients accumulate into existing buffers; the tape is cleared
    afterwards, so calling this twice for the same loss is an error.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    if loss._rule is None or loss._generation != _TAPE.generation:
        raise ContractError("loss was not recorded on the active tape (backward already ran or tape was reset)")

    loss.grad = np.ones_like(loss.data)
    for out in reversed(_TAPE.entries[: loss._position + 1]):
        g = out.grad
        if g is None:
            continue
        grads = out._rule(g)
        for inp, gi in zip(out._inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(gi, dtype=np.float64, copy=True)
            else:
                inp.grad = inp.grad + gi
    _TAPE.reset()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _TAPE.record(out, (a, b), rule)


def spmm(adj: sp.spmatrix, x: Tensor) -> Tensor:
    """Multiply a constant sparse matrix by a tensor."""
    x = _as_tensor(x)
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: adjacency {adj.shape} does not match features {x.shape}")
    out = Tensor(adj @ x.data)

    def rule(g):
        return (adj.T @ g,)

    return _TAPE.record(out, (x,), rule)


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} and {b.shape}") from exc
    out = Tensor(value)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _TAPE.record(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} and {b.shape}") from exc
    out = Tensor(value)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _TAPE.record(out, (a, b), rule)


def scale(a: Tensor, factor: float) -> Tensor:
    a = _as_tensor(a)
    factor = float(factor)
    out = Tensor(a.data * factor)
    return _TAPE.record(out, (a,), lambda g: (g * factor,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _TAPE.record(out, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    value = np.tanh(a.data)
    out = Tensor(value)
    return _TAPE.record(out, (a,), lambda g: (g * (1.0 - value * value),))


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum())
    return _TAPE.record(out, (a,), lambda g: (np.broadcast_to(g, a.shape),))


# -- structural -------------------------------------------------------------


def concat_cols(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeError(f"concat_cols: leading dimensions differ: {[t.shape for t in tensors]}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=-1))
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def rule(g):
        return tuple(g[..., bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _TAPE.record(out, tensors, rule)


def row_select(x: Tensor, indices) -> Tensor:
    """Gather rows; repeated indices are allowed and their gradients summed."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row_select: index out of range for {n} rows")
    out = Tensor(x.data[idx])

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _TAPE.record(out, (x,), rule)


def _check_ptr(x: Tensor, ptr: np.ndarray) -> np.ndarray:
    ptr = np.asarray(ptr, dtype=np.intp)
    if x.data.ndim != 2 or ptr[0] != 0 or ptr[-1] != x.shape[0]:
        raise ShapeError(f"segment boundaries {ptr.tolist()} do not cover {x.shape[0]} rows")
    if np.any(np.diff(ptr) < 1):
        raise ContractError("every segment must contain at least one row")
    return ptr


def segment_mean(x: Tensor, ptr) -> Tensor:
    """Column means of each contiguous row block ``x[ptr[g]:ptr[g+1]]``."""
    x = _as_tensor(x)
    ptr = _check_ptr(x, ptr)
    counts = np.diff(ptr).astype(np.float64)[:, None]
    # sorting each column first makes the sum independent of row order, bit for bit
    sums = [np.sort(x.data[a:b], axis=0).sum(axis=0) for a, b in zip(ptr[:-1], ptr[1:])]
    out = Tensor(np.stack(sums) / counts if sums else np.zeros((0, x.shape[1])))
    owner = np.repeat(np.arange(len(counts)), np.diff(ptr))

    def rule(g):
        return ((g / counts)[owner],)

    return _TAPE.record(out, (x,), rule)


def segment_max(x: Tensor, ptr) -> Tensor:
    """Column maxima of each contiguous row block.

    The gradient of each output entry goes to the lowest-index row that
    attains the maximum.
    """
    x = _as_tensor(x)
    ptr = _check_ptr(x, ptr)
    starts = ptr[:-1]
    value = np.maximum.reduceat(x.data, starts, axis=0)
    owner = np.repeat(np.arange(len(starts)), np.diff(ptr))
    rows = np.arange(x.shape[0])[:, None]
    hit = np.where(x.data == value[owner], rows, x.shape[0])
    argmax = np.minimum.reduceat(hit, starts, axis=0)
    out = Tensor(value)
    cols = np.arange(x.shape[1])[None, :]

    def rule(g):
        full = np.zeros_like(x.data)
        full[argmax, np.broadcast_to(cols, argmax.shape)] = g
        return (full,)

    return _TAPE.record(out, (x,), rule)


def reduce_mean_rows(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"reduce_mean_rows needs a nonempty matrix, got shape {x.shape}")
    return segment_mean(x, [0, x.shape[0]])


def reduce_max_rows(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"reduce_max_rows needs a nonempty matrix, got shape {x.shape}")
    return segment_max(x, [0, x.shape[0]])


# -- loss -------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of binary labels under softmax(logits)."""
    logits = _as_tensor(logits)
    y = np.asarray(labels)
    if logits.data.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"softmax_cross_entropy: expected B x 2 logits, got {logits.shape}")
    if y.ndim != 1 or y.shape[0] != logits.shape[0] or y.shape[0] < 1:
        raise ValidationError(f"expected {logits.shape[0]} labels, got shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError(f"labels must be 0 or 1, got {sorted(set(y.tolist()))}")
    y = y.astype(np.intp)
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    rows = np.arange(len(y))
    out = Tensor(-log_probs[rows, y].mean())

    def rule(g):
        d = np.exp(log_probs)
        d[rows, y] -= 1.0
        return (d * (g / len(y)),)

    return _TAPE.record(out, (logits,), rule)
