"""A small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations the rating model needs are provided. Every op records a
closure that maps the output gradient to input gradients; ``Tensor.backward``
walks the graph in reverse topological order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError, NumericFailureError

_ONE_MINUS = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise InvalidShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if g is node.grad else g
                else:
                    parent.grad = parent.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function, clipped to stay strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _TINY, _ONE_MINUS)


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_values(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def softmax(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along the last axis. ``mask`` (bool, same shape) excludes entries."""
    x = a.data
    if x.shape[-1] < 1:
        raise InvalidShapeError("softmax over an empty axis")
    if mask is None:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise InvalidShapeError("softmax mask leaves a row with no valid entries")
        top = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x - top, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (a,), backward)


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/keep so eval mode is the identity."""
    if not train or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shape

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``a[idx]`` along axis 0; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx.ravel(), g.reshape((-1,) + a.shape[1:]))
        return (full,)

    return _result(out, (a,), backward)


embedding = gather


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., k) and ``b`` a (k, m) matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise InvalidShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Like ``linear`` but each output row is computed independently of the
    others, so results do not depend on how rows are batched."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise InvalidShapeError(f"dense shapes {x.shape} and {w.shape} do not align")
    out = np.einsum("...k,km->...m", x.data, w.data, optimize=False)

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    y = _result(out, (x, w), backward)
    return y if b is None else add(y, b)


def conv1d(seq: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D cross-correlation.

    seq: (..., L, d_in), kernels: (w, d_in, d_out), bias: (d_out,)
    returns (..., L - w + 1, d_out)
    """
    x, k = seq.data, kernels.data
    if k.ndim != 3 or x.ndim < 2 or x.shape[-1] != k.shape[1] or bias.shape != (k.shape[2],):
        raise InvalidShapeError(f"conv1d shapes {x.shape}, {k.shape}, {bias.shape} do not align")
    width, d_in, d_out = k.shape
    length = x.shape[-2]
    if length < width:
        raise InvalidShapeError(f"conv1d input length {length} shorter than kernel width {width}")
    n_out = length - width + 1
    # one matmul per kernel offset over a contiguous slice; avoids an im2col copy
    out = x[..., 0:n_out, :] @ k[0]
    for j in range(1, width):
        out += x[..., j:j + n_out, :] @ k[j]
    out += bias.data

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gk = np.empty_like(k)
        gx = np.zeros_like(x)
        for j in range(width):
            gk[j] = x[..., j:j + n_out, :].reshape(-1, d_in).T @ g2
            gx[..., j:j + n_out, :] += g @ k[j].T
        return gx, gk, g2.sum(axis=0)

    return _result(out, (seq, kernels, bias), backward)


def maxpool1d(seq: Tensor, window: int, stride: int) -> Tensor:
    """Windowed max over axis -2. Ties route gradient to the earliest index."""
    x = seq.data
    if window < 1 or stride < 1:
        raise InvalidArgumentError("window and stride must be positive")
    length = x.shape[-2]
    if length < window:
        raise InvalidShapeError(f"maxpool1d input length {length} shorter than window {window}")
    n_out = (length - window) // stride + 1
    if stride == window:
        wins = x[..., :n_out * window, :].reshape(x.shape[:-2] + (n_out, window, x.shape[-1]))
        arg = wins.argmax(axis=-2)
        out = np.take_along_axis(wins, arg[..., None, :], axis=-2)[..., 0, :]
    else:
        # (..., n_out, d, window)
        wins = np.lib.stride_tricks.sliding_window_view(x, window, axis=-2)[..., ::stride, :, :][..., :n_out, :, :]
        arg = wins.argmax(axis=-1)
        out = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x)
        stop = stride * (n_out - 1) + 1
        for j in range(window):
            gx[..., j:j + stop:stride, :] += np.where(arg == j, g, 0.0)
        return (gx,)

    return _result(out, (seq,), backward)


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[[Dict[str, Tensor]], Tensor], point: Mapping[str, np.ndarray],
               h: float = 1e-5, return_details: bool = False, floor: float = 1e-10):
    """Compare analytic gradients of scalar ``f`` against central differences.

    Returns max over all parameter entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Entries whose true gradient is near zero are dominated by difference
    roundoff (about eps * |f| / h); raise ``floor`` to judge those absolutely.
    """
    if h <= 0:
        raise InvalidArgumentError("h must be positive")
    arrays = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    out = f(tensors)
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise NumericFailureError("grad_check: function output is not a finite scalar")
    out.backward()

    def evaluate() -> float:
        val = f({k: Tensor(v) for k, v in arrays.items()}).data
        if not np.isfinite(val).all():
            raise NumericFailureError("grad_check: non-finite output under perturbation")
        return float(val)

    worst, details = 0.0, {}
    for name, arr in arrays.items():
        analytic = tensors[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        numeric = np.empty(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = evaluate()
            flat[j] = orig - h
            down = evaluate()
            flat[j] = orig
            numeric[j] = (up - down) / (2.0 * h)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        err = float((np.abs(a - numeric) / denom).max()) if flat.size else 0.0
        details[name] = err
        worst = max(worst, err)
    return (worst, details) if return_details else worst


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **kwargs)


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0):
    """One Adam update, in place. Weight decay is added to the gradient (L2)."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericFailureError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise InvalidShapeError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name!r}")
        if weight_decay:
            g = g + weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def finite_or_raise(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NumericFailureError(f"{what} is not finite: {value}")
    return value
