"""Dense float64 tensors with a tape-based reverse-mode gradient engine.

Only the operations the model graph needs are provided. Every op accepts
leading batch dimensions and follows numpy broadcasting, so a whole minibatch
is processed with one tape entry per op.

Recording happens only inside an active :class:`Tape`::

    with Tape() as tape:
        loss = model(x)
    backward(tape, loss)

Outside a tape, ops run as plain numpy calls and nothing is retained.
"""
from __future__ import annotations

import os
import threading
from collections.abc import Callable, Mapping, Sequence
from typing import Optional, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_DEBUG = os.environ.get("AFCN_DEBUG", "") not in ("", "0")
_local = threading.local()


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf policing at op boundaries."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    # make ndarray (op) Tensor defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64) if not (
            isinstance(data, np.ndarray) and data.dtype == np.float64
        ) else data
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # arithmetic
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, p: float): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else (axes or None))

    @property
    def mT(self) -> "Tensor":
        """Swap the last two axes."""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(self, axes)

    def abs(self): return tabs(self)
    def relu(self): return relu(self)
    def sqrt(self): return power(self, 0.5)
    def exp(self): return texp(self)
    def log(self): return tlog(self)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "out", "backward")

    def __init__(self, inputs, out, backward):
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so every node's inputs were produced
    earlier on the tape (or are leaves).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._prev: Optional[Tape] = None

    def record(self, inputs: tuple, out: Tensor, backward: Callable) -> None:
        self.nodes.append(_Node(inputs, out, backward))
        self._produced.add(id(out))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev
        self._prev = None


def current_tape() -> Optional[Tape]:
    return getattr(_local, "tape", None)


def _emit(data: np.ndarray, inputs: tuple, backward: Callable, name: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{name} produced non-finite values")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in tape._produced:
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _emit(a.data * b.data, (a, b), bw, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb
    return _emit(a.data / b.data, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return _emit(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def tabs(a: Tensor) -> Tensor:
    # sign(0) == 0 gives the zero subgradient at kinks
    return _emit(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a: Tensor) -> Tensor:
    return _emit(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return _emit(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def tlog(a: Tensor) -> Tensor:
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data >= floor
    return _emit(np.maximum(a.data, floor), (a,), lambda g: (g * keep,), "clamp_min")


# reductions and shape ops

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _emit(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        ga = np.zeros_like(a.data)
        if _is_basic_index(idx):
            ga[idx] += g
        else:
            np.add.at(ga, idx, g)
        return (ga,)
    return _emit(np.array(a.data[idx], dtype=np.float64), (a,), bw, "getitem")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))
    return _emit(out, tensors, bw, "stack")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _emit(out, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


# linear algebra

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return _emit(a.data @ b.data, (a, b), bw, "matmul")


def conv1d(signal: ArrayLike, kernel: ArrayLike, dilation: int = 1,
           padding: Optional[int] = None) -> Tensor:
    """Dilated cross-correlation along the last axis.

    ``out[..., t] = sum_j kernel[j] * padded[..., t + j*dilation]``. With
    ``padding=None`` the padding is ``dilation*(w-1)/2`` so the length is
    preserved, which requires an odd kernel width.
    """
    x, k = as_tensor(signal), as_tensor(kernel)
    if k.ndim != 1:
        raise ValueError(f"conv1d kernel must be 1-D, got shape {k.shape}")
    if dilation < 1:
        raise ValueError(f"dilation must be positive, got {dilation}")
    w = k.shape[0]
    if padding is None:
        if w % 2 == 0:
            raise ValueError(f"same-length conv1d needs an odd kernel width, got {w}")
        padding = dilation * (w - 1) // 2
    T = x.shape[-1]
    t_out = T + 2 * padding - dilation * (w - 1)
    if t_out < 1:
        raise ValueError(f"signal length {T} too short for kernel {w} at dilation {dilation}")
    pad = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
    xp = np.pad(x.data, pad)
    out = np.zeros(x.shape[:-1] + (t_out,))
    for j in range(w):
        out += k.data[j] * xp[..., j * dilation: j * dilation + t_out]

    def bw(g):
        gk = None
        if k.requires_grad:
            gk = np.array([np.sum(g * xp[..., j * dilation: j * dilation + t_out]) for j in range(w)])
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(w):
                gxp[..., j * dilation: j * dilation + t_out] += k.data[j] * g
            gx = gxp[..., padding: padding + T]
        return gx, gk
    return _emit(out, (x, k), bw, "conv1d")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _emit(out, (a,), bw, "log_softmax")


# gradient checking

def finite_diff_check(f: Callable[[], Tensor], params: Union[Mapping[str, Tensor], Sequence[Tensor]],
                      h: float = 1e-5, n_probe: int = 100, seed: int = 0) -> float:
    """Max relative error between taped gradients and central differences.

    Probes are spread round-robin over the parameter tensors, with a random
    coordinate drawn inside each. ``f`` is re-evaluated without a tape for the
    difference quotients, so it must be deterministic for fixed params.
    """
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    for p in plist:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(n_probe):
        p = plist[n % len(plist)]
        i = np.unravel_index(int(rng.integers(p.size)), p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[i])
        orig = p.data[i]
        p.data[i] = orig + h
        fp = f().item()
        p.data[i] = orig - h
        fm = f().item()
        p.data[i] = orig
        cd = (fp - fm) / (2 * h)
        denom = max(abs(analytic), abs(cd), 1e-8)
        worst = max(worst, abs(analytic - cd) / denom)
    return worst
