"""Small reverse-mode autodiff over numpy arrays.

A recorded ``Tensor`` remembers its parents and a backward closure.  Every
tensor produced while recording is appended to a module-level tape in
creation order; since parents always precede children, walking the tape
backwards propagates gradients without an explicit topological sort.

Training runs in float32; gradient checks build float64 graphs (ops preserve
the dtype of their inputs).
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import _kernels

_TAPE: list["Tensor"] = []
_RECORDING: bool = True


def reset_tape() -> None:
    _TAPE.clear()


@contextmanager
def no_grad():
    """Disable recording inside the block."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this (scalar) tensor through the tape."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        self.grad = np.ones_like(self.data)
        for node in reversed(_TAPE):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        if p == 2:
            return mul(self, self)
        raise NotImplementedError("only square is supported")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _record(out: Tensor, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out._parents = parents
    out._backward = backward
    _TAPE.append(out)
    return out


def _needs_grad(*parents: Tensor) -> bool:
    return _RECORDING and any(p.requires_grad or p._backward is not None
                              for p in parents)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to the given shape (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a: Tensor, b: Tensor, data: np.ndarray,
            da: Callable[[np.ndarray], np.ndarray],
            db: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    out = Tensor(data)
    if not _needs_grad(a, b):
        return out

    def backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(da(g), a.data.shape))
        b._accumulate(_unbroadcast(db(g), b.data.shape))

    return _record(out, (a, b), backward)


def _unary(a: Tensor, data: np.ndarray,
           da: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    out = Tensor(data)
    if not _needs_grad(a):
        return out

    def backward(g: np.ndarray) -> None:
        a._accumulate(da(g))

    return _record(out, (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data * b.data,
                   lambda g: g * b.data, lambda g: g * a.data)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data / b.data,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data @ b.data,
                   lambda g: g @ b.data.T, lambda g: a.data.T @ g)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _unary(a, a.data * mask, lambda g: g * mask)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, y, lambda g: g * y * (1.0 - y))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _unary(a, y, lambda g: g * (1.0 - y * y))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _unary(a, y, lambda g: g * y)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _unary(a, y, lambda g: g / (2.0 * y))


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x), computed stably for large |x|
    y = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, y, lambda g: g * sig)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def da(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, a.data.shape)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape)

    return _unary(a, data, da)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def cumsum(a: Tensor, axis: int) -> Tensor:
    def da(g: np.ndarray) -> np.ndarray:
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return _unary(a, np.cumsum(a.data, axis=axis), da)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data)
    if not _needs_grad(*tensors):
        return out
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _record(out, tuple(tensors), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along the first axis; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)

    def da(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _unary(a, a.data[idx], da)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def da(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return _unary(a, a.data[sl], da)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _unary(a, a.data.reshape(shape),
                  lambda g: g.reshape(a.data.shape))


def normalize(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Rows scaled to unit length; the norm is clamped below by eps."""
    n = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nc = np.maximum(n, eps)
    y = a.data / nc
    clamped = n < eps

    def da(g: np.ndarray) -> np.ndarray:
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / nc
        return np.where(clamped, g / nc, gx)

    return _unary(a, y, da)


def trilerp(table: Tensor, idx: np.ndarray, w: np.ndarray) -> Tensor:
    """Trilinear interpolation into a (T, F) feature table.

    idx: (N, 8) int64 corner rows, w: (N, 8) float64 weights.  Runs on the
    compiled kernels when available.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    data = _kernels.trilerp_gather(table.data, idx, w)

    def da(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(table.data)
        _kernels.trilerp_scatter(full, idx, w,
                                 np.ascontiguousarray(g, dtype=table.data.dtype))
        return full

    return _unary(table, data, da)


# ---------------------------------------------------------------------------
# parameters and optimization

def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int,
                dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Kaiming-uniform weight and zero bias for a linear layer."""
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return (Tensor(w.astype(dtype), requires_grad=True),
            Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))


class Adam:
    """Adam with bias correction, matching the standard update rule."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# finite-difference gradient checking

def numerical_grad(f: Callable[[], float], x: np.ndarray,
                   entries: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference derivative of f at the given flat entries of x."""
    flat = x.reshape(-1)
    out = np.empty(len(entries), dtype=np.float64)
    for n, i in enumerate(entries):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        out[n] = (fp - fm) / (2.0 * h)
    return out


def gradcheck(build_loss: Callable[[], Tensor], params: dict[str, Tensor],
              rng: np.random.Generator, entries_per_param: int = 4,
              h: float = 1e-5, rtol: float = 1e-4) -> float:
    """Compare tape gradients against central differences.

    Returns the worst relative error max(|a-n| / max(|n|, 1)) over the
    sampled entries.  Parameters should be float64 for the tolerance to be
    meaningful.
    """
    reset_tape()
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    reset_tape()

    def feval() -> float:
        reset_tape()
        with_tape = build_loss()
        val = float(with_tape.data)
        reset_tape()
        return val

    worst = 0.0
    for k, p in params.items():
        n = min(entries_per_param, p.data.size)
        entries = rng.choice(p.data.size, size=n, replace=False)
        num = numerical_grad(feval, p.data, entries, h=h)
        ana = analytic[k].reshape(-1)[entries]
        rel = np.abs(ana - num) / np.maximum(np.abs(num), 1.0)
        worst = max(worst, float(rel.max()))
    return worst


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"MDCKPT01"


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays to a flat binary checkpoint."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype=np.float32)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = arr.astype(np.float32)
        return out
