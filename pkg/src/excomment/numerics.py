"""Dense float64 tensors with a reverse-mode tape, Adam, and checkpoint I/O.

Operations record onto the innermost active :class:`Tape`.  Outside any tape
they run as plain numpy code, which is what decoding uses.

    with Tape() as tape:
        loss = cross_entropy(x @ w, 2)
    backward(tape, loss)
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "stack",
    "getitem",
    "reshape",
    "sum_axis",
    "embedding",
    "sigmoid",
    "tanh",
    "softmax",
    "log_softmax",
    "blend",
    "cross_entropy",
    "glorot_uniform",
    "clip_grad_norm",
    "Adam",
    "numerical_gradient",
    "relative_error",
    "save_tensors",
    "load_tensors",
]


class ShapeError(ValueError):
    pass


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed operations.

    Each record is ``(output, inputs, vjp)`` where ``vjp`` maps the output
    gradient to one gradient (or None) per input.  Records are appended in
    execution order, so the list is already topologically sorted.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.records)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name: str, data) -> None:
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].records.append((out, inputs, vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Parameter gradients add onto whatever is already stored, so call
    ``zero_grad`` between optimizer steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, vjp in reversed(tape.records):
        g = out.grad
        if g is None:
            continue
        grads = vjp(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            t.grad = gt if t.grad is None else t.grad + gt
        out.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _new(data: np.ndarray) -> Tensor:
    # skips the asarray conversion for results that are already float64 arrays
    t = Tensor.__new__(Tensor)
    t.data, t.grad, t.requires_grad = data, None, False
    return t


def _binary(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _new(_binary("add", np.add, a, b))
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _new(_binary("sub", np.subtract, a, b))
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _new(_binary("mul", np.multiply, a, b))
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def blend(a, b, s) -> Tensor:
    """a * (1 - s) + b * s, with ``s`` broadcast against ``a`` and ``b``.

    At s == 0 the result is ``a`` bit for bit, and at s == 1 it is ``b``.
    """
    a, b, s = _as_tensor(a), _as_tensor(b), _as_tensor(s)
    if a.shape != b.shape:
        raise ShapeError(f"blend: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = _new(a.data * (1.0 - s.data) + b.data * s.data)
    except ValueError:
        raise ShapeError(f"blend: gate shape {s.shape} does not broadcast against {a.shape}") from None

    def vjp(g):
        return (
            g * (1.0 - s.data),
            g * s.data,
            _unbroadcast(g * (b.data - a.data), s.shape),
        )

    return _record(out, (a, b, s), vjp)


def matmul(a, b) -> Tensor:
    """(..., k) @ (k, n).  The right operand must be a matrix."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _new(a.data @ b.data)

    def vjp(g):
        ga = g @ b.data.T
        k, n = b.shape
        gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _record(out, (a, b), vjp)


# structural ------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    try:
        out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None
    n = len(tensors)
    return _record(
        out,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    out = _new(a.data[index])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return _record(out, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = _new(a.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot map shape {a.shape} onto {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def sum_axis(a: Tensor, axis: int | None = None) -> Tensor:
    out = _new(a.data.sum(axis=axis))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record(out, (a,), vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {table.shape[0]}) for table {table.shape}")
    out = _new(table.data[ids])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _record(out, (table,), vjp)


# nonlinearities --------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = _new(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _new(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def _masked(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is False get 0."""
    z = _masked(a.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _new(y)
    return _record(out, (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return x - (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))


def log_softmax(a: Tensor) -> Tensor:
    y = _log_softmax(a.data)
    p = np.exp(y)
    out = _new(y)
    return _record(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, target, weights=None) -> Tensor:
    """Summed ``-log softmax(logits)[target]``.

    ``logits`` is (V,) with an integer target, or (B, V) with a length-B
    target array.  Optional per-row ``weights`` (e.g. a padding mask) scale
    each row's loss.
    """
    x = logits.data
    V = x.shape[-1]
    if V < 2:
        raise ShapeError(f"cross_entropy: need at least 2 classes, got shape {logits.shape}")
    single = x.ndim == 1
    x2 = x.reshape(1, V) if single else x
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if t.shape != (x2.shape[0],):
        raise ShapeError(f"cross_entropy: target shape {t.shape} does not match logits {logits.shape}")
    if t.min() < 0 or t.max() >= V:
        raise ValueError(f"cross_entropy: target id outside [0, {V})")
    w = np.ones(x2.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    logp = _log_softmax(x2)
    rows = np.arange(x2.shape[0])
    out = Tensor(-(w * logp[rows, t]).sum())

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        grad *= (g * w)[:, None]
        return (grad.reshape(x.shape),)

    return _record(out, (logits,), vjp)


# initialization and optimization --------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    r = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-r, r, size=shape)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    params = list(params)
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


class Adam:
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * p.grad
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()}, "v": {k: v.copy() for k, v in self.v.items()}}


# gradient checking -----------------------------------------------------------


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. every entry of ``x`` (mutated and restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


# checkpoints -----------------------------------------------------------------

CHECKPOINT_FORMAT = "excomment-tensors/1"


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named tensors as JSON: ``{"format", "meta", "tensors": [{name, shape, values}]}``.

    Values are row-major; Python's float repr round-trips exactly, so loading
    is bit-identical.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in tensors.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a tensor checkpoint (format={doc.get('format')!r})")
    tensors = {
        t["name"]: np.asarray(t["values"], dtype=np.float64).reshape(t["shape"]) for t in doc["tensors"]
    }
    return tensors, doc.get("meta", {})
