"""Compiled kernels. Must match _pykernels.py to float64 round-off.

Typed memoryviews only; numpy is used from Python level for allocation, so
no numpy C-API dependency is needed at build time.
"""

import numpy as np

from libc.math cimport exp, sqrt
from libc.stdint cimport int64_t, int8_t


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(rows):
        mx = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(cols):
            out[i, j] /= s
    return out_arr


def softmax_bwd(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0]
    cdef Py_ssize_t cols = y.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += y[i, j] * gy[i, j]
        for j in range(cols):
            out[i, j] = y[i, j] * (gy[i, j] - inner)
    return out_arr


def layer_norm_fwd(double[:, ::1] x, double eps):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    xhat_arr = np.empty((rows, cols), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, dev, r
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += x[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            dev = x[i, j] - mu
            var += dev * dev
        var /= cols
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(cols):
            xhat[i, j] = (x[i, j] - mu) * r
    return xhat_arr, rstd_arr


def layer_norm_bwd(double[:, ::1] xhat, double[::1] rstd, double[:, ::1] gy):
    cdef Py_ssize_t rows = xhat.shape[0]
    cdef Py_ssize_t cols = xhat.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double g_mean, gx_mean
    for i in range(rows):
        g_mean = 0.0
        gx_mean = 0.0
        for j in range(cols):
            g_mean += gy[i, j]
            gx_mean += gy[i, j] * xhat[i, j]
        g_mean /= cols
        gx_mean /= cols
        for j in range(cols):
            out[i, j] = rstd[i] * (gy[i, j] - g_mean - xhat[i, j] * gx_mean)
    return out_arr


def adam_update(double[::1] w, double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps,
                double weight_decay):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - beta1**t
    cdef double bc2 = 1.0 - beta2**t
    cdef double shrink = 1.0 - lr * weight_decay
    cdef int decay = weight_decay != 0.0
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        if decay:
            w[i] *= shrink
        w[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


def sign_runs(double[::1] d):
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i
    cdef int prev = 0, cur
    cdef Py_ssize_t count = 0
    for i in range(n):
        cur = 1 if d[i] > 0.0 else (-1 if d[i] < 0.0 else 0)
        if cur != 0 and cur != prev:
            count += 1
        prev = cur
    starts_arr = np.empty(count, dtype=np.int64)
    ends_arr = np.empty(count, dtype=np.int64)
    signs_arr = np.empty(count, dtype=np.int8)
    if count == 0:
        return starts_arr, ends_arr, signs_arr
    cdef int64_t[::1] starts = starts_arr
    cdef int64_t[::1] ends = ends_arr
    cdef int8_t[::1] signs = signs_arr
    cdef Py_ssize_t k = -1
    prev = 0
    for i in range(n):
        cur = 1 if d[i] > 0.0 else (-1 if d[i] < 0.0 else 0)
        if cur != prev:
            if prev != 0:
                ends[k] = i
            if cur != 0:
                k += 1
                starts[k] = i
                signs[k] = cur
        prev = cur
    if prev != 0:
        ends[k] = n
    return starts_arr, ends_arr, signs_arr
