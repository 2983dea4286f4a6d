"""Reverse-mode automatic differentiation over numpy arrays.

The op set is deliberately small: exactly what the record and notes models
need (matmul, activations, softmax, concat/stack, reductions, embedding
lookup, elementwise arithmetic) plus two fused losses that work in log
space. Every op registers a vector-Jacobian product; :func:`gradients` walks
the graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError, VocabularyError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_dtype = np.float64


def get_dtype():
    return _dtype


def set_precision(name: str) -> None:
    global _dtype
    if name not in _DTYPES:
        raise UsageError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _dtype = _DTYPES[name]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new leaves."""
    previous = _dtype
    set_precision(name)
    try:
        yield
    finally:
        globals()["_dtype"] = previous


class SliceGrad:
    """Gradient contribution to a sub-region of a parent (basic indexing)."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Tensor:
    """An array node in a differentiable graph.

    Leaves are built with ``Tensor(data)``; they are finite-checked and cast
    to the active precision. Op results come from :meth:`_op`.
    """

    __slots__ = ("data", "parents", "vjp", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None, requires_grad: bool = True):
        arr = np.array(data, dtype=_dtype)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.parents: tuple = ()
        self.vjp = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _op(cls, data, parents, vjp):
        out = object.__new__(cls)
        out.data = data
        out.name = None
        if any(p.requires_grad for p in parents):
            out.parents = parents
            out.vjp = vjp
            out.requires_grad = True
        else:
            out.parents = ()
            out.vjp = None
            out.requires_grad = False
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, dtype={self.data.dtype})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable graph input."""
    if isinstance(data, Tensor):
        return data
    out = object.__new__(Tensor)
    out.data = np.asarray(data, dtype=_dtype) if not isinstance(data, np.ndarray) else data
    out.parents = ()
    out.vjp = None
    out.requires_grad = False
    out.name = None
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.data.shape, b.data.shape

    def vjp(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return Tensor._op(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.data.shape, b.data.shape

    def vjp(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(-g, sb) if b.requires_grad else None)

    return Tensor._op(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return Tensor._op(a.data * b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)
    return Tensor._op(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    return Tensor._op(a.data * c, (a,), lambda g: (g * c,))


def blend(prev, new, keep) -> Tensor:
    """``(1 - keep) * prev + keep * new`` with ``keep`` a constant array.

    Used for state carry-over: padding steps and zoneout both hold the
    previous state wherever ``keep`` is 0.
    """
    prev, new = _lift(prev), _lift(new)
    keep = np.asarray(keep, dtype=new.data.dtype)
    out = (1 - keep) * prev.data + keep * new.data

    def vjp(g):
        return (_unbroadcast(g * (1 - keep), prev.data.shape) if prev.requires_grad else None,
                _unbroadcast(g * keep, new.data.shape) if new.requires_grad else None)

    return Tensor._op(out, (prev, new), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; ``a`` may carry leading batch dimensions.

    ``b`` is either a 2-D matrix shared across the batch or has the same
    leading dimensions as ``a``.
    """
    a, b = _lift(a), _lift(b)
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2] or (
        B.ndim > 2 and A.shape[:-2] != B.shape[:-2]
    ):
        raise DimensionError(f"matmul shape mismatch: {A.shape} x {B.shape}")
    out = np.matmul(A, B)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(B, -1, -2))
        if b.requires_grad:
            if B.ndim == 2 and A.ndim > 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(A, -1, -2), g)
        return ga, gb

    return Tensor._op(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x) -> Tensor:
    x = _lift(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return Tensor._op(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x) -> Tensor:
    x = _lift(x)
    y = np.tanh(x.data)
    return Tensor._op(y, (x,), lambda g: (g * (1 - y * y),))


def relu(x) -> Tensor:
    x = _lift(x)
    pos = x.data > 0
    return Tensor._op(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def exp(x) -> Tensor:
    x = _lift(x)
    y = np.exp(x.data)
    return Tensor._op(y, (x,), lambda g: (g * y,))


_POINTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def pointwise(f: str, x) -> Tensor:
    try:
        fn = _POINTWISE[f]
    except KeyError:
        raise UsageError(f"unknown pointwise function {f!r}") from None
    return fn(x)


def softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    if x.data.ndim == 0 or x.data.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._op(y, (x,), vjp)


def masked_softmax(x, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to entries where ``mask`` is 1.

    ``x`` broadcasts against ``mask``; fully-masked slices yield all zeros.
    """
    x = _lift(x)
    mask = np.asarray(mask, dtype=bool)
    xb = np.broadcast_to(x.data, mask.shape)
    big = np.where(mask, xb, -np.inf)
    top = big.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, xb - top, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    y = (e / np.where(denom > 0, denom, 1.0)).astype(x.data.dtype, copy=False)
    shape = x.data.shape

    def vjp(g):
        return (_unbroadcast(y * (g - (g * y).sum(axis=axis, keepdims=True)), shape),)

    return Tensor._op(y, (x,), vjp)


# ---------------------------------------------------------------------------
# fused recurrence


def _sig(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def lstm_sequence(xw, U, keep_h, keep_c, rec_mask=None, reset=None, reverse: bool = False) -> Tensor:
    """Whole-sequence LSTM as one graph node, with backpropagation through time in numpy.

    ``xw`` (B, T, 4h) is the precomputed input projection ``x W + b`` with gates
    ordered (i, f, g, o). At each step the state update is blended with the
    previous state by ``keep_h``/``keep_c`` (B, T, h): 0 holds the old state
    (padding, zoneout), 1 takes the new one. ``rec_mask`` (B, h) multiplies the
    state fed back into the cell; ``reset`` (B, T) zeroes the incoming state.
    Returns the state sequence (B, T, h) in input order.
    """
    xw, U = _lift(xw), _lift(U)
    Z = xw.data
    Um = U.data
    B, T, four_h = Z.shape
    n = Um.shape[0]
    if four_h != 4 * n or Um.shape[1] != 4 * n:
        raise DimensionError(f"lstm_sequence shape mismatch: xw {Z.shape}, U {Um.shape}")
    dt = Z.dtype
    keep_h = np.broadcast_to(np.asarray(keep_h, dtype=dt), (B, T, n))
    keep_c = np.broadcast_to(np.asarray(keep_c, dtype=dt), (B, T, n))
    rm = None if rec_mask is None else np.asarray(rec_mask, dtype=dt)
    r_all = None if reset is None else 1.0 - np.asarray(reset, dtype=dt)
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    H = np.empty((B, T, n), dtype=dt)
    hp, cp, gates, tcs = {}, {}, {}, {}
    h = np.zeros((B, n), dtype=dt)
    c = np.zeros((B, n), dtype=dt)
    for t in steps:
        if r_all is not None:
            h = h * r_all[:, t:t + 1]
            c = c * r_all[:, t:t + 1]
        h_in = h * rm if rm is not None else h
        z = Z[:, t] + h_in @ Um
        s = _sig(z)
        i, f, o = s[:, :n], s[:, n:2 * n], s[:, 3 * n:]
        g = np.tanh(z[:, 2 * n:3 * n])
        cn = f * c + i * g
        tc = np.tanh(cn)
        hn = o * tc
        hp[t], cp[t], gates[t], tcs[t] = h, c, (i, f, g, o), tc
        c = (1 - keep_c[:, t]) * c + keep_c[:, t] * cn
        h = (1 - keep_h[:, t]) * h + keep_h[:, t] * hn
        H[:, t] = h

    def vjp(G):
        dZ = np.zeros_like(Z)
        dU = np.zeros_like(Um)
        dh = np.zeros((B, n), dtype=dt)
        dc = np.zeros((B, n), dtype=dt)
        for t in reversed(steps):
            i, f, g, o = gates[t]
            kh, kc, tc = keep_h[:, t], keep_c[:, t], tcs[t]
            dh = dh + G[:, t]
            dhn = kh * dh
            dcn = kc * dc + dhn * o * (1 - tc * tc)
            dh_prev = (1 - kh) * dh
            dc_prev = (1 - kc) * dc + dcn * f
            dz = np.concatenate([dcn * g * i * (1 - i), dcn * cp[t] * f * (1 - f),
                                 dcn * i * (1 - g * g), dhn * tc * o * (1 - o)], axis=1)
            dZ[:, t] = dz
            h_in = hp[t] * rm if rm is not None else hp[t]
            dU += h_in.T @ dz
            dh_in = dz @ Um.T
            dh_prev = dh_prev + (dh_in * rm if rm is not None else dh_in)
            if r_all is not None:
                dh_prev = dh_prev * r_all[:, t:t + 1]
                dc_prev = dc_prev * r_all[:, t:t + 1]
            dh, dc = dh_prev, dc_prev
        return (dZ if xw.requires_grad else None, dU if U.requires_grad else None)

    return Tensor._op(H, (xw, U), vjp)


# ---------------------------------------------------------------------------
# shape manipulation


def getitem(x, index) -> Tensor:
    x = _lift(x)
    out = x.data[index]
    return Tensor._op(out, (x,), lambda g: (SliceGrad(index, g),))


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    old = x.data.shape
    return Tensor._op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_lift(x) for x in xs]
    if not xs:
        raise DimensionError("concat of zero tensors")
    sizes = [x.data.shape[axis] for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        parts = []
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if not x.requires_grad:
                parts.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return Tensor._op(out, tuple(xs), vjp)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_lift(x) for x in xs]
    if not xs:
        raise DimensionError("stack of zero tensors")
    out = np.stack([x.data for x in xs], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) if x.requires_grad else None for i, x in enumerate(xs))

    return Tensor._op(out, tuple(xs), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _lift(x)
    shape = x.data.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._op(out, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    n = x.data.size if axis is None else int(np.prod([x.data.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# embeddings


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of ``table``; the backward pass scatter-adds rows."""
    table = _lift(table)
    ids = np.asarray(ids, dtype=np.int64)
    V = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)].flat[0]
        raise VocabularyError(f"id {int(bad)} outside vocabulary of size {V}")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return Tensor._op(out, (table,), vjp)


# ---------------------------------------------------------------------------
# fused losses


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Per-row categorical cross-entropy, computed with log-sum-exp.

    ``logits`` is (..., C); ``targets`` holds integer class ids of shape (...).
    """
    logits = _lift(logits)
    t = np.asarray(targets, dtype=np.int64)
    z = logits.data
    top = z.max(axis=-1, keepdims=True)
    shifted = z - top
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    out = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]

    def vjp(g):
        p = np.exp(logp)
        np.put_along_axis(p, t[..., None], np.take_along_axis(p, t[..., None], axis=-1) - 1, axis=-1)
        return (p * g[..., None],)

    return Tensor._op(out, (logits,), vjp)


def sigmoid_cross_entropy(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits, stable for any magnitude."""
    logits = _lift(logits)
    x = logits.data
    y = np.asarray(targets, dtype=x.dtype)
    out = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        e = np.exp(-np.abs(x))
        s = np.where(x >= 0, 1 / (1 + e), e / (1 + e))
        return (g * (s - y),)

    return Tensor._op(out, (logits,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def gradients(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Tensors the output does not depend on get zero arrays.
    """
    if output.data.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.data.shape}")
    grads: dict[int, np.ndarray] = {}
    owned: set[int] = set()
    if output.requires_grad:
        grads[id(output)] = np.ones_like(output.data)
        keep = {id(t) for t in wrt}
        for node in reversed(_topological(output)):
            g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if isinstance(pg, SliceGrad):
                    buf = grads.get(key)
                    if buf is None:
                        buf = np.zeros_like(parent.data)
                        grads[key] = buf
                        owned.add(key)
                    elif key not in owned:
                        buf = buf.copy()
                        grads[key] = buf
                        owned.add(key)
                    buf[pg.index] += pg.value
                elif key in grads:
                    grads[key] = grads[key] + pg
                    owned.add(key)
                else:
                    grads[key] = pg
    return [np.asarray(grads.get(id(t), np.zeros_like(t.data)), dtype=t.data.dtype).reshape(t.data.shape)
            for t in wrt]


def backward(output: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Named gradient map for every parameter in ``params``."""
    names = list(params)
    return dict(zip(names, gradients(output, [params[n] for n in names])))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``fn()`` w.r.t. ``param`` (mutated in place, then restored)."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def check_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                    h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` rebuilds the graph from ``params`` each call.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise UsageError(f"gradient check needs float64 parameters; {name} is {p.data.dtype}")
    report = GradCheckReport(tol=tol)
    if not params:
        return report
    analytic = backward(fn(), params)
    for name, p in params.items():
        report.errors[name] = relative_error(analytic[name], numeric_gradient(fn, p, h))
    return report


# ---------------------------------------------------------------------------
# initialisation


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)).astype(_dtype)


def lstm_init(rng: np.random.Generator, n_in: int, n_hidden: int):
    """Input weights, recurrent weights and bias for gates ordered (i, f, g, o).

    Each gate block is initialised separately; the forget-gate bias starts at 1.
    """
    W = np.concatenate([xavier_uniform(rng, n_in, n_hidden) for _ in range(4)], axis=1)
    U = np.concatenate([xavier_uniform(rng, n_hidden, n_hidden) for _ in range(4)], axis=1)
    b = np.zeros(4 * n_hidden, dtype=_dtype)
    b[n_hidden:2 * n_hidden] = 1.0
    return W, U, b


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params: Mapping[str, np.ndarray | Tensor], manifest: Mapping | None = None) -> Path:
    """Write ``<path>.npz`` (little-endian float32 arrays) and ``<path>.json``."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    stem.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: np.asarray(p.data if isinstance(p, Tensor) else p).astype("<f4")
        for name, p in params.items()
    }
    with open(stem.with_suffix(".npz"), "wb") as fh:
        np.savez(fh, **arrays)
    meta = {"version": CHECKPOINT_VERSION, "config_hash": None, "pretrain_steps": 0}
    meta.update(manifest or {})
    meta["parameters"] = {name: list(a.shape) for name, a in arrays.items()}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return stem.with_suffix(".npz")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    with np.load(stem.with_suffix(".npz")) as z:
        arrays = {k: z[k] for k in z.files}
    manifest = json.loads(stem.with_suffix(".json").read_text())
    return arrays, manifest


def parameters_from(arrays: Mapping[str, np.ndarray], names: Iterable[str] | None = None) -> dict[str, Tensor]:
    names = list(arrays) if names is None else list(names)
    return {n: Tensor(arrays[n], name=n) for n in names}
