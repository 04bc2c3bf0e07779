"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op records its parents and a closure that pushes the output gradient back
to them. Node ids come from a global counter, so creation order is already a
topological order of the tape and :func:`backward` only needs to sort.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable

import numpy as np

_ids = itertools.count()

GELU_C = np.sqrt(2.0 / np.pi)
LN_EPS = 1e-5


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("_backward", "_op", "_parents", "data", "grad", "id", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by {_op or 'input'}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self._op = _op
        self.id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(as_tensor(o)))

    def __rsub__(self, o):
        return add(as_tensor(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, power(as_tensor(o), -1.0))

    def __rtruediv__(self, o):
        return mul(as_tensor(o), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, backward) -> Tensor:
    out = Tensor(data, _parents=tuple(parents), _op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = None

    def bw():
        _acc(a, out.grad)
        _acc(b, out.grad)
    out = _node(a.data + b.data, (a, b), "add", bw)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = None

    def bw():
        _acc(a, out.grad * b.data)
        _acc(b, out.grad * a.data)
    out = _node(a.data * b.data, (a, b), "mul", bw)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, -out.grad)
    out = _node(-a.data, (a,), "neg", bw)
    return out


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad * k * a.data ** (k - 1))
    with np.errstate(divide="ignore"):
        out = _node(a.data ** k, (a,), "pow", bw)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad * out.data)
    with np.errstate(over="ignore"):
        out = _node(np.exp(a.data), (a,), "exp", bw)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad / a.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _node(np.log(a.data), (a,), "log", bw)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad * (1.0 - out.data ** 2))
    out = _node(np.tanh(a.data), (a,), "tanh", bw)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = None
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw():
        _acc(a, out.grad * out.data * (1.0 - out.data))
    out = _node(y, (a,), "sigmoid", bw)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad * (a.data > 0))
    out = _node(np.maximum(a.data, 0.0), (a,), "relu", bw)
    return out


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    out = None
    x = a.data
    u = GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)

    def bw():
        du = GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du
        _acc(a, out.grad * d)
    out = _node(0.5 * x * (1.0 + t), (a,), "gelu", bw)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero where clamping was active."""
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad * ((a.data >= lo) & (a.data <= hi)))
    out = _node(np.clip(a.data, lo, hi), (a,), "clip", bw)
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = None

    def bw():
        g = out.grad
        _acc(a, g @ np.swapaxes(b.data, -1, -2))
        _acc(b, np.swapaxes(a.data, -1, -2) @ g)
    out = _node(a.data @ b.data, (a, b), "matmul", bw)
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = None

    def bw():
        _acc(a, np.transpose(out.grad, inv))
    out = _node(np.transpose(a.data, axes), (a,), "transpose", bw)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        _acc(a, out.grad.reshape(a.shape))
    out = _node(a.data.reshape(shape), (a,), "reshape", bw)
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", bw)
    return out


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = None

    def bw():
        g = out.grad
        _acc(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    out = _node(y, (a,), "softmax", bw)
    return out


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = None

    def bw():
        g = out.grad
        _acc(gamma, g * xhat)
        _acc(beta, g)
        if x.requires_grad:
            gx = g * gamma.data
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _acc(x, dx)
    out = _node(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", bw)
    return out


# ---------------------------------------------------------------------------
# driver

def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Returns a map from each leaf that requires grad to its gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo, seen, stack = [], set(), [loss]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        topo.append(t)
        stack.extend(t._parents)
    topo.sort(key=lambda t: t.id, reverse=True)
    for t in topo:
        t.grad = None
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    for t in topo:
        if t._backward is not None and t.grad is not None:
            t._backward()
        elif not t._parents and t.requires_grad:
            leaves[t] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return leaves


def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|), with
    g_fd from central differences."""
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x, requires_grad=True)
    grads = backward(f(xt))
    g_ad = grads.get(xt, np.zeros_like(x))
    g_fd = np.empty_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(Tensor(x)).item()
        flat[i] = old - eps
        fm = f(Tensor(x)).item()
        flat[i] = old
        g_fd.reshape(-1)[i] = (fp - fm) / (2 * eps)
    err = np.abs(g_ad - g_fd) / np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    return float(err.max()) if err.size else 0.0
