"""Differentiable primitives over :class:`Tensor`.

Every primitive computes its forward value with numpy and records a closure that maps
the output gradient to one gradient per parent.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b),
                lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make(out, (a, b), back, "div")


# elementwise unary --------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make(x ** exponent, (a,), lambda g: (g * exponent * x ** (exponent - 1),), "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return make(out, (a,), lambda g: (g / x,), "log")


def log_abs(a, guard: float = 0.0) -> Tensor:
    """log|x|; raises when any |x| <= guard."""
    a = as_tensor(a)
    x = a.data
    if guard > 0 and np.any(np.abs(x) < guard):
        from .tensor import NumericError
        raise NumericError(f"log_abs: |x| below {guard}")
    with np.errstate(divide="ignore"):
        out = np.log(np.abs(x))
    return make(out, (a,), lambda g: (g / x,), "log_abs")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),), "relu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def elu(a) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    out = np.where(pos, x, np.expm1(np.minimum(x, 0.0)))
    return make(out, (a,), lambda g: (g * np.where(pos, 1.0, out + 1.0),), "elu")


def dropout(a, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# reductions and shape ---------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data[idx]

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return make(np.array(out, dtype=DTYPE), (a,), back, "index")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(out, tensors, back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *(t.shape for t in tensors))
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make(out, tensors, back, "stack")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", old, shape) from None
    return make(out, (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


# linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes.

    1-D operands are promoted to row/column matrices and squeezed back.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.ndim == 1 and b.ndim == 1:
        if a.shape != b.shape:
            raise ShapeError("matmul", a.shape, b.shape)
        return sum(mul(a, b))
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make(out, (a, b), back, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight + bias with weight stored (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# normalisations --------------------------------------------------------

def _masked(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax(a, mask=None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable bool) drops entries exactly.

    Each unmasked row must keep at least one entry.
    """
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError("softmax", a.shape)
    x = _masked(a.data, mask)
    m = x.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        from .tensor import NumericError
        raise NumericError("softmax: a row is fully masked")
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make(out, (a,), back, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError("log_softmax", a.shape)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return make(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(xd.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(out, (x, gamma, beta), back, "layer_norm")


# lookups ---------------------------------------------------------------

def embedding(weight, ids) -> Tensor:
    """Rows of ``weight`` selected by integer array ``ids``."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError("embedding", weight.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {weight.shape[0]} rows")
    wshape = weight.shape
    out = weight.data[ids]

    def back(g):
        full = np.zeros(wshape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, wshape[-1]))
        return (full,)

    return make(out, (weight,), back, "embedding")


def gather_last(a, ids) -> Tensor:
    """out[..., ] = a[..., ids[...]]: one entry per row of the last axis."""
    a = as_tensor(a)
    ids = np.asarray(ids)
    if ids.shape != a.shape[:-1]:
        raise ShapeError("gather_last", a.shape, ids.shape)
    shape = a.shape
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return make(out, (a,), back, "gather_last")


def attention(q, k, v, mask=None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    ``mask`` broadcasts to (..., Lq, Lk); False entries receive exactly zero weight.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", q.shape, k.shape, v.shape)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = mul(matmul(q, swap_last(k)), scale)
    return matmul(softmax(scores, mask), v)
