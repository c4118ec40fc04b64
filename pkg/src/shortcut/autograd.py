"""Minimal dense tensors with tape-based reverse-mode differentiation.

Operations only record themselves when a :class:`Tape` is active *and* at
least one operand is tracked by it (a watched source, or the output of an
earlier recorded op).  Everything else runs as plain numpy, which is the
fast path used for sampling and target generation.

    tape = Tape()
    with tape:
        tape.watch(params.values())
        loss = mse(net_output, target)
    grads = tape.gradient(loss, params)
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """An n-d float array.  32-bit by default; 64-bit arrays are kept as-is."""

    __slots__ = ("data",)

    def __init__(self, data):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not (isinstance(data, np.ndarray) and arr.dtype.type in _FLOAT_TYPES):
            arr = arr.astype(np.float32)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of differentiable operations.

    Entries are appended in execution order, so walking the list backwards
    is a reverse topological traversal of the computation graph.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], GradFn]] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def watch(self, tensors: Iterable[Tensor]) -> None:
        for t in tensors:
            self._tracked.add(id(t))

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: GradFn) -> None:
        self.records.append((out, inputs, grad_fn))
        self._tracked.add(id(out))

    def gradient(self, loss: Tensor, sources):
        """Gradients of scalar ``loss`` w.r.t. ``sources``.

        ``sources`` may be a mapping (returns a dict with the same keys) or a
        sequence (returns a list).  Sources the loss does not depend on get
        zero arrays.
        """
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, grad_fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, grad_fn(g)):
                if gi is None or id(inp) not in self._tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        def lookup(t: Tensor) -> np.ndarray:
            g = grads.get(id(t))
            return np.zeros_like(t.data) if g is None else g.astype(t.dtype, copy=False)

        if isinstance(sources, Mapping):
            return {k: lookup(t) for k, t in sources.items()}
        return [lookup(t) for t in sources]


def backward(tape: Tape, loss: Tensor, sources):
    """Functional alias for :meth:`Tape.gradient`."""
    return tape.gradient(loss, sources)


def _active(inputs: tuple[Tensor, ...]) -> Tape | None:
    if not Tape._stack:
        return None
    tape = Tape._stack[-1]
    for t in inputs:
        if id(t) in tape._tracked:
            return tape
    return None


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    out = Tensor(data)
    tape = _active(inputs)
    if tape is not None:
        tape.record(out, inputs, grad_fn)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def square(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _emit(A * A, (a,), lambda g: (2 * A * g,))


def silu(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    e = np.exp(-np.abs(A))  # never overflows
    sig = np.where(A >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(A * sig, (a,), lambda g: (g * sig * (1 + A * (1 - sig)),))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    a = as_tensor(a)
    c = a.dtype.type(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul (binary) or silu, square (unary)."""
    binary = {"add": add, "sub": sub, "mul": mul}
    unary = {"silu": silu, "square": square}
    if op in binary:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return binary[op](a, b)
    if op in unary:
        return unary[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


def add_bias(x, bias) -> Tensor:
    """Add a length-n bias row to every row of an m×n matrix."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {bias.shape} to {x.shape}")
    return _emit(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def gather_rows(table, index) -> Tensor:
    """Select rows of ``table`` (an embedding lookup)."""
    table = as_tensor(table)
    idx = np.asarray(index, dtype=np.intp)
    n_rows = table.shape[0]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"gather_rows: index out of range for table with {n_rows} rows")
    return _emit(table.data[idx], (table,), grad_fn)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _emit(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


def mse(a, b) -> Tensor:
    """Mean over all entries of (a - b)**2."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mse", a, b)
    diff = a.data - b.data
    n = diff.size
    if n == 0:
        raise ContractError("mse of empty tensors")
    value = np.asarray(np.mean(diff * diff), dtype=a.dtype)

    def grad_fn(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return _emit(value, (a, b), grad_fn)


def stopgrad(a) -> Tensor:
    """Same values, shared buffer; never recorded, so no gradient flows back."""
    a = as_tensor(a)
    return Tensor(a.data)
