"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Operations record themselves on the active :class:`Tape` (define-by-run).
Outside a ``with Tape():`` block nothing is recorded, which is how inference
runs without paying for graph construction.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> backward(loss, tape)
    >>> x.grad
    array([2., 4.])
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
LOG_FLOOR = 1e-12

_active: list["Tape"] = []


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    pass


class Tape:
    """Append-only record of differentiable operations in insertion order."""

    def __init__(self) -> None:
        self.nodes: list[tuple[str, tuple["Tensor", ...], "Tensor", Callable]] = []

    @property
    def position(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.pop()

    def record(self, op: str, inputs: tuple["Tensor", ...], out: "Tensor", fn: Callable) -> None:
        out.tape_id = len(self.nodes)
        self.nodes.append((op, inputs, out, fn))


def active_tape() -> Tape | None:
    return _active[-1] if _active else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.tape_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __neg__ = lambda a: scale(a, -1.0)
    __matmul__ = lambda a, b: matmul(a, b)
    __getitem__ = lambda a, idx: getitem(a, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.tape_id = None
    out.name = None
    if needs:
        tape.record(op, inputs, out, fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_id is None:
        return
    loss.grad = np.ones_like(loss.data)
    for op, inputs, out, fn in reversed(tape.nodes[: loss.tape_id + 1]):
        if out.grad is None:
            continue
        fn(out.grad)
        if out is not loss:
            out.grad = None  # intermediate buffers are not kept


# --- elementwise -------------------------------------------------------------

def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make("add", a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make("sub", a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out_data / b.data, b.shape))

    return _make("div", out_data, (a, b), fn)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: _accumulate(a, g * c))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", s, (a,), lambda g: _accumulate(a, g * s * (1.0 - s)))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make("tanh", t, (a,), lambda g: _accumulate(a, g * (1.0 - t * t)))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: _accumulate(a, g * pos))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make("exp", e, (a,), lambda g: _accumulate(a, g * e))


def log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log with inputs clamped below at ``floor`` (zero gradient there)."""
    a = as_tensor(a)
    x = np.maximum(a.data, floor)
    live = a.data > floor
    return _make("log", np.log(x), (a,), lambda g: _accumulate(a, g * live / x))


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)
    return _make("sqrt", r, (a,), lambda g: _accumulate(a, g * 0.5 / r))


# --- reductions and shape ----------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make("sum", np.asarray(out), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def tmax(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        _accumulate(a, full)

    return _make("max", out, (a,), fn)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make("swapaxes", np.swapaxes(a.data, i, j), (a,),
                 lambda g: _accumulate(a, np.swapaxes(g, i, j)))


def getitem(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make("getitem", np.array(a.data[idx]), (a,), fn)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]``."""
    ids = np.asarray(ids)
    return getitem(weight, ids)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, part)

    return _make("concat", data, tensors, fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        for k, t in enumerate(tensors):
            _accumulate(t, np.take(g, k, axis=axis))

    return _make("stack", data, tensors, fn)


# --- linear algebra and probability -----------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``np.matmul`` semantics for operands with ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accumulate(b, gb)

    return _make("matmul", a.data @ b.data, (a, b), fn)


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    s = _softmax_np(a.data, axis)

    def fn(g):
        _accumulate(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make("softmax", s, (a,), fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make("log_softmax", out, (a,),
                 lambda g: _accumulate(a, g - s * g.sum(axis=axis, keepdims=True)))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Per-row ``-sum(target * log softmax(logits))`` over the last axis.

    ``target`` is a constant distribution (one-hot or soft) with the same shape.
    The result drops the last axis; a 1-D input gives a scalar.
    """
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=DTYPE)
    if t.shape != logits.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs target {t.shape}")
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-6):
        raise ContractError("cross_entropy: target rows must be probability distributions")
    p = _softmax_np(logits.data, -1)
    loss = -(t * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=-1)

    def fn(g):
        g = np.expand_dims(g, -1)
        _accumulate(logits, g * (p * t.sum(axis=-1, keepdims=True) - t))

    return _make("cross_entropy", loss, (logits,), fn)


# --- optimisation -------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update using each parameter's ``.grad``."""
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    for name, p in params.items():
        if p.grad is None or not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# --- randomness ---------------------------------------------------------------

class Rng:
    """Seeded PCG64 stream; ``spawn(label)`` derives independent child streams."""

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = _key
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key)))

    def spawn(self, label: str) -> "Rng":
        return Rng(self.seed, self.key + (zlib.crc32(label.encode("utf-8")),))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, std, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def get_state(self) -> dict:
        return self.gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.gen.bit_generator.state = state


GUMBEL_CLAMP = 1e-12


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


def gumbel_noise(rng: Rng, shape) -> Tensor:
    """Gumbel(0, 1) samples as a constant tensor."""
    return Tensor(gumbel_from_uniform(rng.uniform(shape)))
