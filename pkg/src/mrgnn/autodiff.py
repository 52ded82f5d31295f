"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in order;
``Tape.backward`` replays them in exact reverse order.  A fresh tape is
built for every forward pass, so graphs of different sizes need no padding.

All tensors are two-dimensional.  One-dimensional input is treated as a
single row, which is the layout every vector in the model uses.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Tensor",
    "Tape",
    "ParameterStore",
    "backward",
    "check_numerics",
    "record",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "identity",
    "elementwise",
    "rowwise_softmax",
    "softmax_rows",
    "max_rows",
    "segment_max",
    "elementwise_max_reduce",
    "neighborhood_max",
    "concat",
    "vstack",
    "slice_cols",
    "take_rows",
    "sum_rows",
    "reshape",
    "cross_entropy",
]

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value appeared while numeric checking was enabled."""


class Tensor:
    """A 2-D float64 array that may take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(frozen=True)
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations on tensors that require gradients
    are recorded while it is active.  A tape belongs to the thread that
    entered it.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of ``loss`` for every recorded leaf that requires them."""
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return {}
        produced = {id(rec.output) for rec in self.records}
        if id(loss) not in produced:
            raise ValueError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            for tensor, g in zip(rec.inputs, rec.backward(g_out)):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
                if key not in produced:
                    leaves[key] = tensor
        return {leaves[key]: grads[key] for key in leaves}


_checking = threading.local()


@contextlib.contextmanager
def check_numerics(enabled: bool = True) -> Iterator[None]:
    """Raise :class:`NumericError` as soon as any op produces NaN or Inf."""
    prev = getattr(_checking, "on", False)
    _checking.on = enabled
    try:
        yield
    finally:
        _checking.on = prev


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as the result of an op over ``inputs``.

    This is the hook for custom primitives: ``backward_fn`` maps the
    upstream gradient to one gradient (or ``None``) per input.
    """
    if getattr(_checking, "on", False) and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite value produced by {getattr(backward_fn, '__qualname__', 'op')}")
    tape = _active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.records.append(_Record(tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, params: ParameterStore) -> dict[str, np.ndarray]:
    """Gradient map by parameter name; parameters the loss never touched are absent."""
    by_tensor = tape.backward(loss)
    return {name: by_tensor[p] for name, p in params.items() if p in by_tensor}


class ParameterStore:
    """Named trainable tensors in insertion order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) - set(arrays))
            extra = sorted(set(arrays) - set(self._params))
            raise KeyError(f"parameter set mismatch: missing={missing} unexpected={extra}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data[...] = arr


# --- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def grad(g):
        return (g @ B.T if a.requires_grad else None, A.T @ g if b.requires_grad else None)

    return record(A @ B, (a, b), grad)


def _row_broadcast(a: Tensor, b: Tensor, opname: str) -> bool:
    """True when ``b`` is a 1-row tensor broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        return False
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row added to every row of ``a``."""
    bcast = _row_broadcast(a, b, "add")

    def grad(g):
        return g, (g.sum(axis=0, keepdims=True) if bcast else g)

    return record(a.data + b.data, (a, b), grad)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _row_broadcast(a, b, "sub")

    def grad(g):
        return g, -(g.sum(axis=0, keepdims=True) if bcast else g)

    return record(a.data - b.data, (a, b), grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ: {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, factor: float) -> Tensor:
    return record(a.data * factor, (a,), lambda g: (g * factor,))


# --- pointwise nonlinearities ----------------------------------------------


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def identity(x: Tensor) -> Tensor:
    return x


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, x: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(x)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record(y, (x,), grad)


rowwise_softmax = softmax_rows


# --- max reductions ----------------------------------------------------------
# Ties send the whole gradient to the first maximal entry in list order.


def segment_max(x: Tensor, segments: Sequence[np.ndarray]) -> Tensor:
    """Row ``s`` of the result is the columnwise max over rows ``segments[s]``."""
    X = x.data
    cols = np.arange(X.shape[1])
    winners = []
    out = np.empty((len(segments), X.shape[1]))
    for s, rows in enumerate(segments):
        rows = np.asarray(rows, dtype=np.intp)
        if rows.size == 0:
            raise ValueError("max over an empty set of rows")
        block = X[rows]
        arg = np.argmax(block, axis=0)
        winners.append(rows[arg])
        out[s] = block[arg, cols]

    def grad(g):
        dx = np.zeros_like(X)
        for s, win in enumerate(winners):
            np.add.at(dx, (win, cols), g[s])
        return (dx,)

    return record(out, (x,), grad)


def max_rows(x: Tensor) -> Tensor:
    return segment_max(x, [np.arange(x.shape[0])])


def elementwise_max_reduce(vectors: Sequence[Tensor]) -> Tensor:
    if not vectors:
        raise ValueError("elementwise_max_reduce needs at least one vector")
    return max_rows(vstack(vectors))


def neighborhood_max(x: Tensor, index: np.ndarray) -> Tensor:
    """Row ``i`` is the columnwise max over rows ``index[i, :]`` of ``x``.

    ``index`` is an (m, L) integer matrix; callers pad short neighborhoods by
    repeating an existing member, which leaves the max unchanged.
    """
    X = x.data
    m, c = X.shape
    if index.shape[0] != m:
        raise ShapeError(f"neighborhood index has {index.shape[0]} rows, features have {m}")
    gathered = X[index]  # (m, L, c)
    arg = np.argmax(gathered, axis=1)  # (m, c)
    src = np.take_along_axis(index, arg, axis=1)
    out = np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0, :]
    cols = np.broadcast_to(np.arange(c), (m, c))

    def grad(g):
        dx = np.zeros_like(X)
        np.add.at(dx, (src, cols), g)
        return (dx,)

    return record(out, (x,), grad)


# --- structural ops -----------------------------------------------------------


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Horizontal concatenation of tensors with equal row counts."""
    if not parts:
        raise ValueError("concat needs at least one part")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def grad(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), grad)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("vstack needs at least one part")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"vstack: widths differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def grad(g):
        return [g[bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return record(np.concatenate([p.data for p in parts], axis=0), tuple(parts), grad)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def grad(g):
        dx = np.zeros(shape)
        dx[:, start:stop] = g
        return (dx,)

    return record(x.data[:, start:stop], (x,), grad)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def grad(g):
        dx = np.zeros(shape)
        np.add.at(dx, idx, g)
        return (dx,)

    return record(x.data[idx], (x,), grad)


def sum_rows(x: Tensor) -> Tensor:
    m = x.shape[0]
    return record(x.data.sum(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g, m, axis=0),))


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {(rows, cols)}")
    shape = x.shape
    return record(x.data.reshape(rows, cols), (x,), lambda g: (g.reshape(shape),))


# --- loss -------------------------------------------------------------------


def cross_entropy(r: Tensor, r_hat: Tensor | np.ndarray) -> Tensor:
    """``-sum(r_hat * log r)`` for a one-hot ``r_hat``; probabilities floored at 1e-12."""
    target = r_hat.data if isinstance(r_hat, Tensor) else np.asarray(r_hat, dtype=np.float64).reshape(1, -1)
    if target.shape != r.shape:
        raise ShapeError(f"cross_entropy: prediction {r.shape} vs target {target.shape}")
    if not (np.all((target == 0.0) | (target == 1.0)) and target.sum() == r.shape[0]):
        raise ValueError("cross_entropy target must be one-hot")
    clamped = np.clip(r.data, PROB_FLOOR, 1.0)
    inside = (r.data >= PROB_FLOOR) & (r.data <= 1.0)
    loss = -(target * np.log(clamped)).sum()

    def grad(g):
        return (-g[0, 0] * target / clamped * inside,)

    return record(np.array([[loss]]), (r,), grad)
