"""Differentiable operations.

Each op computes its forward value with numpy and, when recording, registers a
closure mapping the output gradient to one gradient per input.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def _pair(a, b):
    # plain numbers adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b):
    a, b = _pair(a, b)
    return make_result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def abs(x):
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def log(x):
    x = as_tensor(x)
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x, lo, hi):
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def sum(x):
    x = as_tensor(x)
    return make_result(
        np.asarray(x.data.sum(), dtype=x.dtype), (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def mean(x):
    x = as_tensor(x)
    n = x.size
    return make_result(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.dtype),),
    )


def reshape(x, shape):
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# ---------------------------------------------------------------- activations

def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(x.data * pos, (x,), lambda g: (g * pos,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def dropout(x, p, training, rng):
    """Inverted dropout. ``rng`` is a ``numpy.random.Generator`` owned by the caller."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x, w, b=None):
    """x: (N, D_in), w: (D_in, D_out), b: (D_out,)."""
    x, w = as_tensor(x), as_tensor(w)
    out = x.data @ w.data
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        inputs = (x, w, b)

    def backward(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, inputs, backward)


def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, b=None, stride=2, pad=2):
    """Cross-correlation. x: (N, C, H, W), w: (K, C, k, k) -> (N, K, Ho, Wo)."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    kout, cin, k, k2 = w.shape
    if cin != c or k != k2:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    cols = kernels.im2col(x.data, k, stride, pad, ho, wo)
    wm = w.data.reshape(kout, -1)
    out = np.matmul(wm, cols).reshape(n, kout, ho, wo)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, -1, 1, 1)
        inputs = (x, w, b)

    def backward(g):
        gm = g.reshape(n, kout, ho * wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(np.matmul(wm.T, gm), x.shape, k, stride, pad, ho, wo)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, inputs, backward)


def conv_transpose2d(x, w, b=None, stride=2, pad=2, output_padding=1):
    """Adjoint of :func:`conv2d`. x: (N, C, H, W), w: (C, K, k, k) -> (N, K, Ho, Wo).

    Output side is ``(H - 1) * stride - 2 * pad + k + output_padding``; with the
    defaults (5x5, stride 2, pad 2, output_padding 1) that is exactly 2H.
    """
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    cin, kout, k, k2 = w.shape
    if cin != c or k != k2:
        raise ValueError(f"conv_transpose2d shape mismatch: input {x.shape}, kernel {w.shape}")
    ho = (h - 1) * stride - 2 * pad + k + output_padding
    wo = (wd - 1) * stride - 2 * pad + k + output_padding
    if conv_output_size(ho, k, stride, pad) != h or conv_output_size(wo, k, stride, pad) != wd:
        raise ValueError("conv_transpose2d geometry is not the adjoint of a valid conv2d")
    wm = w.data.reshape(c, -1)
    xm = x.data.reshape(n, c, h * wd)
    cols = np.matmul(wm.T, xm)
    out = kernels.col2im(cols, (n, kout, ho, wo), k, stride, pad, h, wd)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, -1, 1, 1)
        inputs = (x, w, b)

    def backward(g):
        gcols = kernels.im2col(np.ascontiguousarray(g), k, stride, pad, h, wd)
        gx = np.matmul(wm, gcols).reshape(x.shape)
        gw = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, inputs, backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization over (N, H, W), or over N for 2-D input.

    ``running_mean`` / ``running_var`` are numpy arrays updated in place in
    training mode.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1, 1)
    m = x.size // x.shape[1]
    if m == 0:
        raise ValueError("batch_norm over an empty channel")
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


# ---------------------------------------------------------------- losses

def mse(pred, target):
    d = sub(pred, target)
    return mean(mul(d, d))


def l1(pred, target):
    return mean(abs(sub(pred, target)))
