"""Reference numpy implementations of the hot kernels.

These define the semantics; the Cython versions in _ckernels.pyx must match
them to float64 round-off (see tests/test_kernels.py).
"""

import numpy as np


def softmax_fwd(x):
    """Row-wise softmax of a 2-D array. Shift-invariant for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_bwd(y, gy):
    """Gradient of row-wise softmax given its output y and upstream gy."""
    inner = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def layer_norm_fwd(x, eps):
    """Row-wise standardization. Returns (xhat, rstd) where
    xhat = (x - mean) * rstd and rstd = 1/sqrt(var + eps)."""
    mu = x.mean(axis=1, keepdims=True)
    var = np.square(x - mu).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat, rstd[:, 0]


def layer_norm_bwd(xhat, rstd, gy):
    """Gradient of row-wise standardization w.r.t. its input."""
    g_mean = gy.mean(axis=1, keepdims=True)
    gx_mean = (gy * xhat).mean(axis=1, keepdims=True)
    return rstd[:, None] * (gy - g_mean - xhat * gx_mean)


def adam_update(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam step with bias correction on flat float64 arrays.

    weight_decay > 0 applies decoupled decay (w scaled by 1 - lr*wd before
    the moment step is subtracted); pass 0.0 for plain Adam.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    if weight_decay:
        w *= 1.0 - lr * weight_decay
    w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sign_runs(d):
    """Maximal runs of constant nonzero sign in a 1-D array.

    Returns (starts, ends, signs) with half-open [start, end) index ranges
    and signs in {-1, +1}. Zeros terminate runs and belong to none.
    """
    n = d.shape[0]
    signs = np.sign(d).astype(np.int8)
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty(0, dtype=np.int8)
    boundaries = np.flatnonzero(signs[1:] != signs[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    keep = signs[starts] != 0
    return (
        starts[keep].astype(np.int64),
        ends[keep].astype(np.int64),
        signs[starts[keep]],
    )
