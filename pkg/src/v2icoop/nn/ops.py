"""Differentiable ops over :class:`Tensor`.

Feature maps are NHWC throughout. Every op checks its output for
non-finite values and records a backward closure on the active tape.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import ndtr

from .tensor import ShapeError, Tensor, as_tensor, record

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return record(ad * bd, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), backward, "div")


def scale(x, c):
    c = float(c)
    return record(x.data * c, (x,), lambda g: (g * c,), "scale")


def exp(x):
    out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    xd = x.data
    if np.any(xd <= 0):
        from .tensor import NonFiniteError
        raise NonFiniteError(f"log: non-positive input (min {xd.min():.3g})")
    return record(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x):
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    out = _sigmoid(x.data)
    return record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x):
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return record(out, (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def tanh(x):
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def absolute(x):
    s = np.sign(x.data)
    return record(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def square(x):
    xd = x.data
    return record(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def gaussian_cdf(x):
    """Standard normal CDF. Derivative is the standard normal density."""
    xd = x.data
    return record(ndtr(xd), (x,),
                  lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd),), "gaussian_cdf")


def lower_bound(x, bound):
    """max(x, bound); gradient passes where x >= bound or where it pushes x up."""
    xd = x.data
    bound = float(bound)
    keep = xd >= bound

    def backward(g):
        return (g * (keep | (g < 0)),)

    return record(np.maximum(xd, bound), (x,), backward, "lower_bound")


def smooth_l1(x, delta):
    """Elementwise Huber-style smooth L1 with transition at ``delta``."""
    xd = x.data
    ax = np.abs(xd)
    quad = ax < delta
    out = np.where(quad, 0.5 * xd * xd / delta, ax - 0.5 * delta)
    return record(out, (x,), lambda g: (g * np.where(quad, xd / delta, np.sign(xd)),), "smooth_l1")


def binarize_ste(x, threshold=0.5):
    """Hard threshold (ties select) forward, identity gradient backward."""
    out = (x.data >= threshold).astype(np.float64)
    return record(out, (x,), lambda g: (g,), "binarize_ste")


def add_noise(x, noise):
    """x + constant noise; gradient w.r.t. x is the identity."""
    return record(x.data + noise, (x,), lambda g: (g,), "add_noise")


def stop_gradient(x):
    return Tensor(x.data.copy())


# -- reductions / shape ----------------------------------------------------

def sum(x, axis=None, keepdims=False):
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.asarray(out, dtype=np.float64), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, index):
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return record(np.array(x.data[index]), (x,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return record(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return record(ad @ bd, (a, b), backward, "matmul")


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record(out, (x,), backward, "softmax")


# -- convolution -----------------------------------------------------------

def conv2d(x, w, b=None, stride=1):
    """2-D convolution, NHWC input, kernel (k, k, Cin, Cout), 'same' zero padding.

    With stride 2 the output is ceil(H/2) x ceil(W/2).
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: expected NHWC input and (k,k,Cin,Cout) kernel, got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {w.shape[2]}")
    k, _, ci, co = w.shape
    if k % 2 != 1:
        raise ShapeError(f"conv2d: odd kernel size required, got {k}")
    n, h, wd, _ = x.shape
    wmat = w.data.reshape(k * k * ci, co)
    inputs = (x, w) if b is None else (x, w, b)

    if k == 1 and stride == 1:
        flat = x.data.reshape(-1, ci)
        out = flat @ wmat
        if b is not None:
            out += b.data
        out = out.reshape(n, h, wd, co)

        def backward(g):
            g2 = g.reshape(-1, co)
            gx = (g2 @ wmat.T).reshape(x.shape) if x.requires_grad else None
            gw = (flat.T @ g2).reshape(w.shape) if w.requires_grad else None
            if b is None:
                return gx, gw
            return gx, gw, g2.sum(axis=0)

        return record(out, inputs, backward, "conv2d")

    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    s0, s1, s2, s3 = xp.strides
    cols = as_strided(xp, (n, ho, wo, k, k, ci), (s0, s1 * stride, s2 * stride, s1, s2, s3))
    cols = cols.reshape(n * ho * wo, k * k * ci)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, co)

    def backward(g):
        g2 = g.reshape(-1, co)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1:
            # full correlation with the flipped kernel
            gp = np.pad(g, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
            t0, t1, t2, t3 = gp.strides
            gcols = as_strided(gp, (n, h, wd, k, k, co), (t0, t1, t2, t1, t2, t3)).reshape(n * h * wd, -1)
            wf = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * co, ci)
            gx = (gcols @ wf).reshape(x.shape)
        elif x.requires_grad:
            gc = (g2 @ wmat.T).reshape(n, ho, wo, k, k, ci)
            gxp = np.zeros(xp.shape)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += gc[:, :, :, di, dj, :]
            gx = gxp[:, pad:pad + h, pad:pad + wd, :]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record(out, inputs, backward, "conv2d")


def upsample2x(x):
    """Nearest-neighbour 2x spatial upsampling (NHWC)."""
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return record(out, (x,), lambda g: (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),), "upsample2x")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; zero gradient where clamped."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return record(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clip")
