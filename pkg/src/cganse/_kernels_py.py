"""Pure-numpy im2col / col2im, used when the compiled extension is missing."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x, k, stride, pad, ho, wo):
    n, c, h, w = x.shape
    # pad enough on the far side that every window slice is in range
    need_h = (ho - 1) * stride + k
    need_w = (wo - 1) * stride + k
    xp = np.zeros((n, c, max(need_h, h + pad), max(need_w, w + pad)), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    s0, s1, s2, s3 = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, k, k, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return win.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad, ho, wo):
    n, c, h, w = shape
    need_h = (ho - 1) * stride + k
    need_w = (wo - 1) * stride + k
    xp = np.zeros((n, c, max(need_h, h + pad), max(need_w, w + pad)), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols6[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def adam_update(p, g, m, v, b1, b2, step, root_c2, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    den = np.sqrt(v)
    den /= root_c2
    den += eps
    np.divide(m, den, out=den)
    den *= step
    p -= den.astype(p.dtype, copy=False)
