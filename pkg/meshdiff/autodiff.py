"""
Tape-based reverse-mode differentiation on float64 numpy arrays.

Values created by a primitive are recorded on the tape of their inputs. Values with no
taped input are constants: primitives on them only compute forward results, which is
how rollouts and finite-difference gradient checks run without recording.
"""

import itertools
from typing import Callable, Iterable, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel

from .errors import ValidationError

ArrayLike = Union["DiffValue", np.ndarray, float, int, Sequence]

_tape_ids = itertools.count(1)


class Tape:
    """Records operations in execution order; backward replays them in reverse."""

    def __init__(self):
        self.tape_id = next(_tape_ids)
        self.nodes: List["DiffValue"] = []

    def variable(self, data: ArrayLike, name: str = "") -> "DiffValue":
        """A leaf that receives gradients."""
        value = DiffValue(_as_array(data), requires_grad=True, tape=self, name=name)
        self.nodes.append(value)
        return value

    def record(self, value: "DiffValue") -> None:
        self.nodes.append(value)

    def backward(self, root: "DiffValue", seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d root / d v into ``v.grad`` for every recorded value."""
        if root.tape is not self:
            raise ValidationError("backward: root value was not recorded on this tape")
        if seed is None:
            if root.data.size != 1:
                raise ValidationError(f"backward: root must be scalar, got shape {root.shape}")
            seed = np.ones_like(root.data)
        for node in self.nodes:
            node.grad = None
        root.grad = np.asarray(seed, dtype=np.float64).reshape(root.shape)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


class DiffValue:
    """An array value, optionally recorded on a tape."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "name", "_backward")
    __array_priority__ = 1000

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        tape: Optional[Tape] = None,
        name: str = "",
    ):
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def tape_id(self) -> Optional[int]:
        return self.tape.tape_id if self.tape is not None else None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"DiffValue(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def const(data: ArrayLike) -> DiffValue:
    """Untaped constant."""
    if isinstance(data, DiffValue):
        return DiffValue(data.data)
    return DiffValue(_as_array(data))


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim > 2:
        raise ValidationError(f"values are at most rank 2, got shape {arr.shape}")
    return arr


def _lift(x: ArrayLike) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(_as_array(x))


def _result(op: str, data: np.ndarray, parents: Iterable[DiffValue], backward) -> DiffValue:
    """Wrap a forward result, recording it when any parent requires gradients."""
    tapes = {p.tape for p in parents if p.requires_grad}
    if not tapes:
        return DiffValue(data)
    if len(tapes) > 1:
        raise ValidationError(f"{op}: inputs are recorded on different tapes")
    tape = tapes.pop()
    out = DiffValue(data, requires_grad=True, tape=tape, name=op)
    out._backward = backward
    tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of rank-2 broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: DiffValue, b: DiffValue):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValidationError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None
    if len(shape) > 2:
        raise ValidationError(f"{op}: broadcasting beyond rank 2")
    return shape


# --- primitives ---


def add(a: ArrayLike, b: ArrayLike) -> DiffValue:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a: ArrayLike, b: ArrayLike) -> DiffValue:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> DiffValue:
    """Elementwise product with rank-2 broadcasting."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result("mul", a.data * b.data, (a, b), backward)


def scalar_mul(a: ArrayLike, c: float) -> DiffValue:
    a = _lift(a)
    c = float(c)

    def backward(g):
        a._accumulate(c * g)

    return _result("scalar_mul", c * a.data, (a,), backward)


def neg(a: ArrayLike) -> DiffValue:
    return scalar_mul(a, -1.0)


def matmul(a: ArrayLike, b: ArrayLike) -> DiffValue:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if b.data.ndim == 1:
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return _result("matmul", a.data @ b.data, (a, b), backward)


def sparse_matmul(A: sp.spmatrix, x: ArrayLike) -> DiffValue:
    """Constant sparse matrix times a value."""
    x = _lift(x)
    if A.shape[1] != x.shape[0]:
        raise ValidationError(f"sparse_matmul: shape mismatch {A.shape} @ {x.shape}")
    At = A.T.tocsr()

    def backward(g):
        x._accumulate(np.asarray(At @ g))

    return _result("sparse_matmul", np.asarray(A @ x.data), (x,), backward)


def tanh(a: ArrayLike) -> DiffValue:
    a = _lift(a)
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    return _result("tanh", y, (a,), backward)


def relu(a: ArrayLike) -> DiffValue:
    a = _lift(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _result("relu", np.where(mask, a.data, 0.0), (a,), backward)


def gather(a: ArrayLike, index: Sequence[int]) -> DiffValue:
    """Rows ``a[index]``."""
    a = _lift(a)
    idx = _check_index("gather", index, a.shape[0])

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        a._accumulate(out)

    return _result("gather", a.data[idx], (a,), backward)


def scatter_add(a: ArrayLike, index: Sequence[int], n_out: int) -> DiffValue:
    """``out[index[i]] += a[i]`` into ``n_out`` rows."""
    a = _lift(a)
    idx = _check_index("scatter_add", index, n_out)
    if idx.shape[0] != a.shape[0]:
        raise ValidationError(f"scatter_add: {idx.shape[0]} indices for {a.shape[0]} rows")
    out = np.zeros((n_out,) + a.shape[1:])
    np.add.at(out, idx, a.data)

    def backward(g):
        a._accumulate(g[idx])

    return _result("scatter_add", out, (a,), backward)


def sum(a: ArrayLike) -> DiffValue:
    a = _lift(a)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).astype(np.float64))

    return _result("sum", np.asarray(a.data.sum()), (a,), backward)


def mean(a: ArrayLike) -> DiffValue:
    a = _lift(a)
    n = max(a.data.size, 1)

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape).astype(np.float64))

    return _result("mean", np.asarray(a.data.sum() / n), (a,), backward)


def squared_norm(a: ArrayLike) -> DiffValue:
    a = _lift(a)

    def backward(g):
        a._accumulate(2.0 * g * a.data)

    return _result("squared_norm", np.asarray(np.sum(a.data * a.data)), (a,), backward)


def concat(values: Sequence[ArrayLike], axis: int = 1) -> DiffValue:
    parts = [_lift(v) for v in values]
    if not parts:
        raise ValidationError("concat: no inputs")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ValidationError(f"concat: {e}") from None
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            p._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _result("concat", data, parts, backward)


def reshape(a: ArrayLike, shape) -> DiffValue:
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ValidationError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    if data.ndim > 2:
        raise ValidationError("reshape: values are at most rank 2")

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result("reshape", data, (a,), backward)


def slice_flat(a: ArrayLike, start: int, stop: int) -> DiffValue:
    """Entries ``start:stop`` of a 1-D value."""
    a = _lift(a)
    if a.data.ndim != 1 or not 0 <= start <= stop <= a.shape[0]:
        raise ValidationError(f"slice_flat: bad range {start}:{stop} for shape {a.shape}")

    def backward(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        a._accumulate(out)

    return _result("slice_flat", a.data[start:stop], (a,), backward)


def _check_index(op: str, index, n: int) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{op}: index out of range for {n} rows")
    return idx


# --- gradient checking ---


class GradCheckResult(BaseModel):
    passed: bool
    max_error: float
    n_checked: int


def grad_check(
    f: Callable[[DiffValue], DiffValue],
    x: ArrayLike,
    h: float = 1e-5,
    tol: float = 1e-4,
    indices: Optional[Sequence[int]] = None,
) -> GradCheckResult:
    """
    Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    The error per coordinate is |a - n| / max(1, |a|, |n|); ``indices`` restricts the
    check to a subset of flat coordinates.
    """
    x0 = _as_array(x)
    tape = Tape()
    xv = tape.variable(x0.copy())
    out = f(xv)
    if out.tape is tape:
        tape.backward(out)
        analytic = xv.grad if xv.grad is not None else np.zeros_like(x0)
    else:
        analytic = np.zeros_like(x0)

    flat = x0.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    max_err, count = 0.0, 0
    for i in coords:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = f(const(plus.reshape(x0.shape))).item()
        f_minus = f(const(minus.reshape(x0.shape))).item()
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        max_err = max(max_err, err)
        count += 1
    return GradCheckResult(passed=bool(max_err < tol), max_error=max_err, n_checked=count)
