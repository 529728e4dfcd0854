#!/usr/bin/env python3
"""
Dense reverse-mode differentiation over numpy arrays.

Features:
- Tensor: a numpy array plus a backward closure, recorded on a dynamic tape
- Param: a named, freezable leaf tensor (the unit the optimizer updates)
- Neural primitives: layer norm, softmax/log-softmax, SiLU, dropout,
  segment sums for message aggregation, safe norms, smooth-l1
- RngStream: counter-based (Philox) randomness, reproducible across platforms
- Adam with global-norm gradient clipping
- Central-difference gradient checker
- Checkpoint container (npz of float32 arrays + JSON metadata)

Every differentiable op builds its output with _make(), which attaches a
closure receiving the upstream gradient and accumulating into the parents.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp as _sp_logsumexp
from scipy.special import softmax as _sp_softmax

from errors import NonFiniteGradient, ShapeMismatch

logger = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(precision: str) -> np.dtype:
    try:
        return np.dtype(DTYPES[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(DTYPES)}") from None


# --- Tensor ------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        if isinstance(data, (np.ndarray, np.generic)):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    # basic properties
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ShapeMismatch(f"backward:{self.op or 'leaf'}", f"grad {g.shape} vs value {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate .grad on every tensor reachable from self that requires it."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, power: float):
        return pow_(self, power)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return gather(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Param(Tensor):
    """A named trainable leaf. Frozen params still receive gradients but no updates."""

    def __init__(self, name: str, value: np.ndarray, frozen: bool = False):
        super().__init__(np.array(value), requires_grad=True, op="param")
        self.name = name
        self.frozen = frozen

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: tuple, op: str, backward: Callable[[np.ndarray], None]) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, _parents=parents if requires else (), op=op)
    if requires:
        out._backward = backward
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b, Tensor(np.zeros(())))
    return _lift(a, b), b


# --- Elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch("add", str(e)) from None

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise ShapeMismatch("sub", str(e)) from None

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch("mul", str(e)) from None

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        data = a.data / b.data
    except ValueError as e:
        raise ShapeMismatch("div", str(e)) from None

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), "div", backward)


def pow_(a: Tensor, power: float) -> Tensor:
    data = a.data ** power

    def backward(g):
        a._accumulate(g * power * a.data ** (power - 1))

    return _make(data, (a,), "pow", backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), "exp", lambda g: a._accumulate(g * data))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), "log", lambda g: a._accumulate(g / a.data))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return _make(data, (a,), "sqrt", lambda g: a._accumulate(g * 0.5 / data))


def abs_(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), "abs", lambda g: a._accumulate(g * np.sign(a.data)))


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.data.dtype)
    return _make(a.data * mask, (a,), "relu", lambda g: a._accumulate(g * mask))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), "sigmoid", lambda g: a._accumulate(g * s * (1.0 - s)))


def silu(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    data = a.data * s

    def backward(g):
        a._accumulate(g * s * (1.0 + a.data * (1.0 - s)))

    return _make(data, (a,), "silu", backward)


def smooth_l1(a: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber: 0.5 r^2/beta inside |r| < beta, |r| - beta/2 outside."""
    r = a.data
    inside = np.abs(r) < beta
    data = np.where(inside, 0.5 * r * r / beta, np.abs(r) - 0.5 * beta)

    def backward(g):
        a._accumulate(g * np.where(inside, r / beta, np.sign(r)))

    return _make(data, (a,), "smooth_l1", backward)


# --- Linear algebra / shape ops ----------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul", f"operands must be at least 2-D, got {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatch("matmul", f"{a.shape} @ {b.shape}: {e}") from None

    def backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(data, (a, b), "matmul", backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(data, dtype=a.data.dtype), (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _make(data, (a,), "reshape", lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), "transpose", lambda g: a._accumulate(g.transpose(inverse)))


def gather(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(np.asarray(data), (a,), "gather", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch("concat", str(e)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make(data, tuple(tensors), "concat", backward)


def segment_sum(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Row-wise scatter-add: out[s] = sum of a[e] with segment_ids[e] == s."""
    out = np.zeros((num_segments,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, segment_ids, a.data)
    return _make(out, (a,), "segment_sum", lambda g: a._accumulate(g[segment_ids]))


def norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm whose gradient is defined as 0 at the origin."""
    data = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=keepdims))

    def backward(g):
        n = data if keepdims else np.expand_dims(data, axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        a._accumulate(np.where(n > 0, gg * a.data / safe, 0.0))

    return _make(data, (a,), "norm", backward)


def min_(a: Tensor, axis: int = -1) -> Tensor:
    idx = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    data = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return _make(data, (a,), "min", backward)


# --- Neural primitives -------------------------------------------------------

def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    data = _sp_logsumexp(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        lse = data if keepdims else np.expand_dims(data, axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(gg * np.exp(a.data - lse))

    return _make(np.asarray(data, dtype=a.data.dtype), (a,), "logsumexp", backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = _sp_softmax(a.data, axis=axis).astype(a.data.dtype)

    def backward(g):
        a._accumulate(s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    return _make(s, (a,), "softmax", backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    lse = _sp_logsumexp(a.data, axis=axis, keepdims=True)
    data = a.data - lse

    def backward(g):
        s = np.exp(data)
        a._accumulate(g - s * np.sum(g, axis=axis, keepdims=True))

    return _make(data.astype(a.data.dtype), (a,), "log_softmax", backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gain + bias over the last axis."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered * pow_(var + eps, -0.5) * gain + bias


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def dropout(x: Tensor, rate: float, rng: Optional["RngStream"], training: bool) -> Tensor:
    """Inverted dropout. Rate 0 or eval mode returns x itself."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RngStream")
    keep = rng.generator().random(x.shape) >= rate
    mask = keep.astype(x.data.dtype) / (1.0 - rate)
    return x * Tensor(mask)


# --- Randomness --------------------------------------------------------------

@dataclass
class RngStream:
    """Counter-based random stream: identical (seed, counter) gives identical draws."""

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed % (1 << 64), counter=self.counter << 128)
        self.counter += 1
        return np.random.Generator(bitgen)

    def child(self, name: str) -> "RngStream":
        digest = hashlib.blake2b(f"{self.seed}:{name}".encode(), digest_size=8).digest()
        return RngStream(int.from_bytes(digest, "little"))


def glorot(gen: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


# --- Optimizer ---------------------------------------------------------------

def clip_grad_norm(params: Iterable[Param], max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most max_norm; return the pre-clip norm."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


@dataclass
class Adam:
    params: Mapping[str, Param]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 0.5
    state: dict = field(default_factory=dict)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> float:
        """One clipped Adam update over non-frozen params. Returns the pre-clip gradient norm."""
        trainable = [p for p in self.params.values() if not p.frozen]
        bad = [p.name for p in trainable if p.grad is not None and not np.all(np.isfinite(p.grad))]
        if bad:
            raise NonFiniteGradient(bad)
        total = clip_grad_norm(trainable, self.clip)
        for p in trainable:
            if p.grad is None:
                continue
            m, v, t = self.state.get(p.name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            self.state[p.name] = (m, v, t)
        self.zero_grad()
        return total


# --- Gradient checking -------------------------------------------------------

def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Param],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-4,
) -> dict[str, float]:
    """
    Compare backprop gradients against central differences.

    loss_fn must rebuild the whole computation on each call. Returns the
    maximum relative error per parameter, where relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad_or_zeros().copy() for name, p in params.items()}

    gen = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, p in params.items():
        flat_count = p.data.size
        if max_entries is not None and flat_count > max_entries:
            picks = gen.choice(flat_count, size=max_entries, replace=False)
        else:
            picks = np.arange(flat_count)
        worst = 0.0
        for flat in picks:
            idx = np.unravel_index(int(flat), p.shape)
            original = p.data[idx]
            p.data[idx] = original + h
            plus = float(loss_fn().data)
            p.data[idx] = original - h
            minus = float(loss_fn().data)
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            a = float(analytic[name][idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        errors[name] = worst
    for p in params.values():
        p.zero_grad()
    return errors


# --- Checkpoints -------------------------------------------------------------

CHECKPOINT_ARRAYS = "checkpoint.npz"
CHECKPOINT_META = "checkpoint.json"


def save_checkpoint(out_dir: Path | str, params: Mapping[str, Param | np.ndarray], metadata: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: np.ascontiguousarray(p.data if isinstance(p, Tensor) else p, dtype="<f4")
        for name, p in params.items()
    }
    np.savez(out_dir / CHECKPOINT_ARRAYS, **arrays)
    with open(out_dir / CHECKPOINT_META, "w") as f:
        json.dump(metadata, f, indent=2, sort_keys=True)
    logger.info(f"Saved checkpoint with {len(arrays)} arrays to {out_dir}")
    return out_dir


def load_checkpoint(ckpt_dir: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    ckpt_dir = Path(ckpt_dir)
    with np.load(ckpt_dir / CHECKPOINT_ARRAYS) as archive:
        arrays = {name: archive[name] for name in archive.files}
    with open(ckpt_dir / CHECKPOINT_META) as f:
        metadata = json.load(f)
    return arrays, metadata
