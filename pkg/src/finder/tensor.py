"""Minimal reverse-mode autodiff over dense numpy arrays.

Every differentiable operation used by the model lives in this module. Each
op produces a new :class:`Tensor` and, when any input requires a gradient,
attaches an op record carrying a global sequence number. ``backward`` collects
the records reachable from the loss, orders them by sequence number (the
recording order) and replays their adjoints in reverse.

Arrays are stored in the current default precision: float32 unless changed
with :func:`precision`.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor", "OpRecord", "ShapeError", "NonFiniteError",
    "tensor", "precision", "default_dtype", "strict_checks",
    "matmul", "add", "sub", "mul", "div", "neg", "exp", "relu",
    "sum", "mean", "concat", "gather", "segment_sum", "segment_mean",
    "conv1d", "reshape", "collect_tape", "backward", "no_grad",
]

_seq = itertools.count()
_state = {"dtype": np.dtype(np.float32), "strict": False, "grad_enabled": True}


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def strict_checks(enabled: bool = True):
    """Reject non-finite op inputs while active."""
    old = _state["strict"]
    _state["strict"] = enabled
    try:
        yield
    finally:
        _state["strict"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


@dataclass
class OpRecord:
    name: str
    inputs: tuple
    adjoint: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    seq: int


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._op: OpRecord | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._op is not None


def _check_finite(name, *arrays):
    if _state["strict"]:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"{name}: non-finite input of shape {a.shape}")


def _make(name: str, data: np.ndarray, inputs: tuple, adjoint) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _state["grad_enabled"] and any(_tracked(t) for t in inputs):
        out._op = OpRecord(name, inputs, adjoint, next(_seq))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(name, a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None
    _check_finite(name, a.data, b.data)
    return a, b


# --- element-wise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary("div", a, b)
    out = a.data / b.data

    def adjoint(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make("div", out, (a, b), adjoint)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    _check_finite("exp", a.data)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    _check_finite("relu", a.data)
    mask = a.data > 0  # subgradient at 0 is 0
    return _make("relu", np.maximum(a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,))


# --- reductions and shape ---------------------------------------------------

def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=a.dtype), (a,), adjoint)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return _make("mean", np.asarray(out, dtype=a.dtype), (a,), adjoint)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    ts = [_as_tensor(t) for t in tensors]
    lead = {t.shape[:-1] for t in ts}
    if len(lead) != 1:
        raise ShapeError(f"concat: leading shapes differ: {[t.shape for t in ts]}")
    splits = np.cumsum([t.shape[-1] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=-1)
    return _make("concat", out, tuple(ts), lambda g: tuple(np.split(g, splits, axis=-1)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _check_finite("matmul", a.data, b.data)
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


# --- indexing and segments --------------------------------------------------

def _segment_matrix(ids: np.ndarray, num_segments: int, dtype) -> sp.csr_matrix:
    n = len(ids)
    return sp.csr_matrix((np.ones(n, dtype=dtype), (ids, np.arange(n))), shape=(num_segments, n))


def _segment_sum_np(values: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    if values.shape[0] == 0:
        return np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    flat = values.reshape(values.shape[0], -1)
    out = _segment_matrix(ids, num_segments, values.dtype) @ flat
    return np.asarray(out, dtype=values.dtype).reshape((num_segments,) + values.shape[1:])


def gather(a, index) -> Tensor:
    """Select rows ``a[index]``; the adjoint scatters-adds back."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather: index out of range for {a.shape[0]} rows")
    n = a.shape[0]
    return _make("gather", a.data[index], (a,),
                 lambda g: (_segment_sum_np(g, index, n),))


def _check_segments(name, a, ids, num_segments):
    if ids.ndim != 1 or len(ids) != a.shape[0]:
        raise ShapeError(f"{name}: {len(ids)} segment ids for input of shape {a.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ShapeError(f"{name}: segment ids must lie in 0..{num_segments - 1}")


def segment_sum(a, ids, num_segments: int | None = None) -> Tensor:
    a = _as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    num_segments = int(ids.max()) + 1 if num_segments is None else num_segments
    _check_segments("segment_sum", a, ids, num_segments)
    return _make("segment_sum", _segment_sum_np(a.data, ids, num_segments), (a,),
                 lambda g: (g[ids],))


def segment_mean(a, ids, num_segments: int | None = None) -> Tensor:
    """Mean of rows sharing a segment id. Empty segments give zero rows."""
    a = _as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    num_segments = int(ids.max()) + 1 if num_segments is None else num_segments
    _check_segments("segment_mean", a, ids, num_segments)
    counts = np.bincount(ids, minlength=num_segments).astype(a.dtype)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0).astype(a.dtype)
    inv = inv.reshape((-1,) + (1,) * (a.ndim - 1))
    out = _segment_sum_np(a.data, ids, num_segments) * inv
    return _make("segment_mean", out, (a,), lambda g: ((g * inv)[ids],))


# --- convolution ------------------------------------------------------------

def conv1d(x, w) -> Tensor:
    """Stride-1, same-padded 1-D convolution.

    x: (batch, length, in_channels); w: (kernel, in_channels, out_channels)
    with an odd kernel size. Returns (batch, length, out_channels).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    _check_finite("conv1d", x.data, w.data)
    k, cin, cout = w.shape
    b, length, _ = x.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, s:s + length, :] for s in range(k)], axis=2)
    cols2 = cols.reshape(b * length, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    out = (cols2 @ wmat).reshape(b, length, cout)

    def adjoint(g):
        g2 = g.reshape(b * length, cout)
        gw = (cols2.T @ g2).reshape(k, cin, cout)
        gcols = (g2 @ wmat.T).reshape(b, length, k, cin)
        gxp = np.zeros_like(xp)
        for s in range(k):
            gxp[:, s:s + length, :] += gcols[:, :, s, :]
        return gxp[:, pad:pad + length, :], gw

    return _make("conv1d", out, (x, w), adjoint)


# --- tape replay ------------------------------------------------------------

def collect_tape(loss: Tensor) -> list[tuple[Tensor, OpRecord]]:
    """Op records reachable from ``loss`` in recording order."""
    seen: set[int] = set()
    found: list[tuple[Tensor, OpRecord]] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._op is None or id(t) in seen:
            continue
        seen.add(id(t))
        found.append((t, t._op))
        stack.extend(t._op.inputs)
    found.sort(key=lambda item: item[1].seq)
    return found


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = collect_tape(loss)
    if not tape and not loss.requires_grad:
        raise ValueError("backward: loss is not connected to any tracked tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss._op is None:
        leaves[id(loss)] = loss
    for out, op in reversed(tape):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.adjoint(g)):
            if gi is None or not _tracked(inp):
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp._op is None:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None or not leaf.requires_grad:
            continue
        g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
