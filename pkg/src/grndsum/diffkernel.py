"""A small reverse-mode autodiff kernel over dense float64 arrays.

Operations append a record to the active :class:`Tape` when any input
requires a gradient. :func:`backward` walks the tape in reverse, fills
``.grad`` on every tensor that requires one, and clears the tape.

Broadcasting is limited to adding a row vector to every row of a matrix.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


# --- tape -----------------------------------------------------------------


class Tape:
    """Ordered record of (output, inputs, backward) entries; single-threaded."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = [Tape()]
        _state.enabled = True
    return _state.stack


def current_tape() -> Tape:
    return _stack()[-1]


def grad_enabled() -> bool:
    _stack()
    return _state.enabled


@contextmanager
def new_tape():
    """Run ops on a fresh tape, restoring the previous one afterwards."""
    stack = _stack()
    tape = Tape()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


@contextmanager
def no_grad():
    _stack()
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], Sequence]) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        current_tape().records.append((out, tuple(inputs), backward))
    return out


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = current_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for out, inputs, fn in reversed(tape.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if out.requires_grad:
                out.grad = g if out.grad is None else out.grad + g
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # leaves
        seen: dict[int, Tensor] = {}
        for _, inputs, _ in tape.records:
            for inp in inputs:
                seen[id(inp)] = inp
        seen[id(loss)] = loss
        for key, g in grads.items():
            t = seen.get(key)
            if t is not None and t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
    finally:
        tape.clear()


def _check(cond: bool, op: str, *shapes) -> None:
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")


# --- elementwise and linear algebra ----------------------------------------


def _is_row_bias(a: np.ndarray, b: np.ndarray) -> bool:
    return a.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1]))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _record(a.data + b.data, (a, b), lambda g: (g, g))
    if _is_row_bias(a.data, b.data):
        bshape = b.shape
        return _record(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0).reshape(bshape)))
    if _is_row_bias(b.data, a.data):
        return add(b, a)
    _check(False, "add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "sub", a.shape, b.shape)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0], "matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    _check(a.data.ndim == 2, "transpose", a.shape)
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        _check(False, "reshape", old, tuple(shape))
    return _record(out.copy(), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    _check(len(tensors) > 0, "concat")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        _check(False, "concat", *[t.shape for t in tensors])
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: np.split(g, bounds, axis=axis))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _check(0 <= start <= stop <= a.shape[0], "slice_rows", a.shape, (start, stop))
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _record(a.data[start:stop].copy(), (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _check(a.data.ndim == 2 and 0 <= start <= stop <= a.shape[1], "slice_cols", a.shape, (start, stop))
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(a.data[:, start:stop].copy(), (a,), bwd)


def take_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    _check(idx.ndim == 1 and (idx.size == 0 or (idx.min() >= 0 and idx.max() < a.shape[0])),
           "take_rows", a.shape, idx.shape)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), bwd)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    return take_rows(table, ids)


# --- nonlinearities ---------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def hinge_pos(a: Tensor) -> Tensor:
    """max(0, x) elementwise."""
    return relu(a)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _record(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    p = _softmax(a.data)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _record(p, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


# --- reductions --------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _record(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def mean_pool(a: Tensor) -> Tensor:
    """Mean over rows: (n, d) -> (1, d)."""
    _check(a.data.ndim == 2 and a.shape[0] > 0, "mean_pool", a.shape)
    n = a.shape[0]
    return _record(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def cumulative_sum(a: Tensor) -> Tensor:
    """Cumulative sum along each row."""
    _check(a.data.ndim == 2, "cumulative_sum", a.shape)
    return _record(np.cumsum(a.data, axis=1), (a,), lambda g: (np.cumsum(g[:, ::-1], axis=1)[:, ::-1],))


# --- losses -------------------------------------------------------------------


def cross_entropy(logits: Tensor, targets: Sequence[int], reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of integer targets against rows of logits."""
    tgt = np.asarray(targets, dtype=np.int64)
    _check(logits.data.ndim == 2 and tgt.shape == (logits.shape[0],), "cross_entropy", logits.shape, tgt.shape)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= logits.shape[1]):
        raise ValueError(f"cross_entropy: target out of range [0, {logits.shape[1]})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(tgt.size)
    losses = lse - z[rows, tgt]
    denom = tgt.size if reduction == "mean" else 1
    p = np.exp(z - lse[:, None])

    def bwd(g):
        d = p.copy()
        d[rows, tgt] -= 1.0
        return (d * (float(g) / denom),)

    return _record(np.array(losses.sum() / denom), (logits,), bwd)


def binary_cross_entropy(probs: Tensor, targets, reduction: str = "mean") -> Tensor:
    y = np.asarray(targets, dtype=DTYPE).reshape(probs.shape)
    p = np.clip(probs.data, 1e-12, 1.0 - 1e-12)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    denom = y.size if reduction == "mean" else 1
    return _record(np.array(losses.sum() / denom), (probs,),
                   lambda g: ((p - y) / (p * (1.0 - p)) * (float(g) / denom),))


def bce_with_logits(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    y = np.asarray(targets, dtype=DTYPE).reshape(logits.shape)
    x = logits.data
    losses = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    denom = y.size if reduction == "mean" else 1
    s = _sigmoid(x)
    return _record(np.array(losses.sum() / denom), (logits,), lambda g: ((s - y) * (float(g) / denom),))


# --- transformer pieces ---------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _check(x.data.ndim == 2 and gain.shape == (x.shape[1],) and bias.shape == (x.shape[1],),
           "layer_norm", x.shape, gain.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gain.data
    d = xd.shape[1]

    def bwd(g):
        gx = g * gd
        dx = inv / d * (d * gx - gx.sum(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(xhat * gd + bias.data, (x, gain, bias), bwd)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head scaled dot-product attention on (T, d) inputs.

    ``mask`` is a boolean (Tq, Tk) array; False entries are not attended.
    Every query row must allow at least one key.
    """
    _check(q.data.ndim == 2 and k.data.ndim == 2 and v.shape == k.shape and q.shape[1] == k.shape[1]
           and q.shape[1] % heads == 0, "attention", q.shape, k.shape, v.shape)
    tq, d = q.shape
    tk = k.shape[0]
    dh = d // heads
    if mask is not None:
        _check(mask.shape == (tq, tk), "attention", q.shape, k.shape, mask.shape)
    qh = q.data.reshape(tq, heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(tk, heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(tk, heads, dh).transpose(1, 0, 2)
    sc = 1.0 / np.sqrt(dh)
    scores = qh @ kh.transpose(0, 2, 1) * sc
    if mask is not None:
        scores = np.where(mask[None], scores, -1e30)
    p = _softmax(scores)
    if mask is not None:
        p = p * mask[None]
    out = (p @ vh).transpose(1, 0, 2).reshape(tq, d)

    def bwd(g):
        gh = g.reshape(tq, heads, dh).transpose(1, 0, 2)
        dv = p.transpose(0, 2, 1) @ gh
        dp = gh @ vh.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * sc
        dq = ds @ kh
        dk = ds.transpose(0, 2, 1) @ qh
        back = lambda a, n: a.transpose(1, 0, 2).reshape(n, d)
        return back(dq, tq), back(dk, tk), back(dv, tk)

    return _record(out, (q, k, v), bwd)


# --- utilities -------------------------------------------------------------------


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
