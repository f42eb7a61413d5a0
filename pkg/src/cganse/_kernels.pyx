# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for strided, zero-padded 2-D convolution."""

import numpy as np
cimport numpy as cnp

ctypedef fused real_t:
    float
    double


def _im2col(real_t[:, :, :, ::1] x, real_t[:, :, ::1] out,
            int k, int stride, int pad, int ho, int wo):
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t n, c, ki, kj, oi, oj, row, ii, jj
    for n in range(n_batch):
        for c in range(c_in):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for oi in range(ho):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            for oj in range(wo):
                                out[n, row, oi * wo + oj] = 0
                            continue
                        for oj in range(wo):
                            jj = oj * stride + kj - pad
                            if jj < 0 or jj >= w:
                                out[n, row, oi * wo + oj] = 0
                            else:
                                out[n, row, oi * wo + oj] = x[n, c, ii, jj]


def _col2im(real_t[:, :, ::1] cols, real_t[:, :, :, ::1] out,
            int k, int stride, int pad, int ho, int wo):
    cdef Py_ssize_t n_batch = out.shape[0], c_in = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t n, c, ki, kj, oi, oj, row, ii, jj
    for n in range(n_batch):
        for c in range(c_in):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    for oi in range(ho):
                        ii = oi * stride + ki - pad
                        if ii < 0 or ii >= h:
                            continue
                        for oj in range(wo):
                            jj = oj * stride + kj - pad
                            if jj >= 0 and jj < w:
                                out[n, c, ii, jj] += cols[n, row, oi * wo + oj]


def im2col(x, int k, int stride, int pad, int ho, int wo):
    x = np.ascontiguousarray(x)
    out = np.empty((x.shape[0], x.shape[1] * k * k, ho * wo), dtype=x.dtype)
    _im2col(x, out, k, stride, pad, ho, wo)
    return out


def col2im(cols, shape, int k, int stride, int pad, int ho, int wo):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, out, k, stride, pad, ho, wo)
    return out


cdef extern from "math.h" nogil:
    double sqrt(double)
    float sqrtf(float)


def _adam(real_t[::1] p, real_t[::1] g, real_t[::1] m, real_t[::1] v,
          double b1, double b2, double step, double root_c2, double eps):
    # work in the array precision so the float32 loop vectorizes
    cdef Py_ssize_t i, n = p.shape[0]
    cdef real_t gi, mi, vi, den
    cdef real_t rb1 = b1, cb1 = 1.0 - b1, rb2 = b2, cb2 = 1.0 - b2
    cdef real_t rstep = step, inv_c2 = 1.0 / root_c2, reps = eps
    for i in range(n):
        gi = g[i]
        mi = rb1 * m[i] + cb1 * gi
        vi = rb2 * v[i] + cb2 * gi * gi
        m[i] = mi
        v[i] = vi
        if real_t is float:
            den = sqrtf(vi) * inv_c2 + reps
        else:
            den = sqrt(vi) * inv_c2 + reps
        p[i] -= rstep * mi / den


def adam_update(p, g, m, v, b1, b2, step, root_c2, eps):
    """Fused in-place Adam moment and parameter update (contiguous arrays)."""
    if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update needs C-contiguous parameter and moment arrays")
    _adam(p.reshape(-1), np.ascontiguousarray(g, dtype=p.dtype).reshape(-1),
          m.reshape(-1), v.reshape(-1), b1, b2, step, root_c2, eps)
