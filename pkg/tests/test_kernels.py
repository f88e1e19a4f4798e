"""Compiled-kernel semantics and backend parity.

Every kernel is checked twice: once against a straight-line numpy oracle
written here (different code path from either backend), and once for
cross-backend agreement. The two backends do not share summation order,
so parity is asserted at float round-off, not bitwise.
"""

import numpy as np
import pytest

import smilefusion.kernels as kernels
from smilefusion.kernels import _pykernels

try:
    from smilefusion.kernels import _ckernels

    HAVE_C = True
except ImportError:  # pragma: no cover - build-dependent
    _ckernels = None
    HAVE_C = False

BACKENDS = [("python", _pykernels)] + ([("cython", _ckernels)] if HAVE_C else [])
PARITY_RTOL = 1e-12


def backends():
    return pytest.mark.parametrize("impl", [b[1] for b in BACKENDS], ids=[b[0] for b in BACKENDS])


def test_cython_backend_is_active_by_default():
    # The build must have produced the extension; the env override is the
    # only sanctioned way to land on the fallback.
    assert HAVE_C, "compiled kernel extension failed to build"
    assert kernels.BACKEND in ("cython", "python")


@backends()
def test_softmax_rows_sum_to_one(impl, rng):
    x = rng.normal(0, 5, size=(40, 17))
    y = impl.softmax_fwd(np.ascontiguousarray(x))
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert (y > 0).all()


@backends()
def test_softmax_matches_oracle(impl, rng):
    x = rng.normal(0, 3, size=(25, 9))
    e = np.exp(x - x.max(axis=1, keepdims=True))
    want = e / e.sum(axis=1, keepdims=True)
    got = impl.softmax_fwd(np.ascontiguousarray(x))
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=0)


@backends()
def test_softmax_shift_invariance(impl, rng):
    x = rng.normal(0, 2, size=(8, 6))
    y1 = impl.softmax_fwd(np.ascontiguousarray(x))
    y2 = impl.softmax_fwd(np.ascontiguousarray(x + 123.0))
    np.testing.assert_allclose(y1, y2, rtol=1e-12)


@backends()
def test_softmax_bwd_matches_jacobian(impl, rng):
    # dx_j = y_j * (gy_j - sum_k gy_k y_k): contract the full Jacobian row
    # by row and compare.
    x = rng.normal(0, 2, size=(6, 5))
    gy = rng.normal(0, 1, size=(6, 5))
    y = impl.softmax_fwd(np.ascontiguousarray(x))
    want = np.empty_like(y)
    for i in range(y.shape[0]):
        jac = np.diag(y[i]) - np.outer(y[i], y[i])
        want[i] = jac @ gy[i]
    got = impl.softmax_bwd(np.ascontiguousarray(y), np.ascontiguousarray(gy))
    np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-14)


@backends()
def test_layer_norm_fwd_matches_oracle(impl, rng):
    eps = 1e-5
    x = rng.normal(3, 4, size=(30, 13))
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    want = (x - mu) / np.sqrt(var + eps)
    xhat, rstd = impl.layer_norm_fwd(np.ascontiguousarray(x), eps)
    np.testing.assert_allclose(xhat, want, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(rstd, 1.0 / np.sqrt(var[:, 0] + eps), rtol=1e-12)


@backends()
def test_layer_norm_rows_standardized(impl, rng):
    x = rng.normal(0, 2, size=(12, 16))
    xhat, _ = impl.layer_norm_fwd(np.ascontiguousarray(x), 1e-5)
    np.testing.assert_allclose(xhat.mean(axis=1), 0.0, atol=1e-13)
    # variance sits just below 1 because of eps
    assert (xhat.var(axis=1) < 1.0).all()


@backends()
def test_layer_norm_bwd_matches_finite_differences(impl, rng):
    eps = 1e-5
    x = rng.normal(0, 1.5, size=(4, 7))
    gy = rng.normal(0, 1, size=(4, 7))
    xhat, rstd = impl.layer_norm_fwd(np.ascontiguousarray(x), eps)
    got = impl.layer_norm_bwd(
        np.ascontiguousarray(xhat), np.ascontiguousarray(rstd), np.ascontiguousarray(gy)
    )

    def loss(arr):
        h, _ = _pykernels.layer_norm_fwd(np.ascontiguousarray(arr), eps)
        return float((h * gy).sum())

    step = 1e-6
    want = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        hi = x.copy()
        lo = x.copy()
        hi[idx] += step
        lo[idx] -= step
        want[idx] = (loss(hi) - loss(lo)) / (2 * step)
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)


def _adam_reference(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    if weight_decay > 0:
        w = w * (1 - lr * weight_decay)
    w = w - lr * mhat / (np.sqrt(vhat) + eps)
    return w, m, v


@backends()
@pytest.mark.parametrize("weight_decay", [0.0, 0.01])
def test_adam_update_matches_reference(impl, rng, weight_decay):
    n = 64
    w = rng.normal(0, 1, n)
    m = np.zeros(n)
    v = np.zeros(n)
    w_ref, m_ref, v_ref = w.copy(), m.copy(), v.copy()
    for t in range(1, 4):
        g = rng.normal(0, 1, n)
        impl.adam_update(w, g.copy(), m, v, t, 1e-3, 0.9, 0.999, 1e-8, weight_decay)
        w_ref, m_ref, v_ref = _adam_reference(
            w_ref, g, m_ref, v_ref, t, 1e-3, 0.9, 0.999, 1e-8, weight_decay
        )
    np.testing.assert_allclose(w, w_ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(m, m_ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(v, v_ref, rtol=1e-12, atol=1e-15)


@backends()
def test_adam_update_is_in_place(impl):
    w = np.ones(4)
    m = np.zeros(4)
    v = np.zeros(4)
    w_id, m_id, v_id = id(w), id(m), id(v)
    impl.adam_update(w, np.ones(4), m, v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0)
    assert (id(w), id(m), id(v)) == (w_id, m_id, v_id)
    assert not np.allclose(w, 1.0)


def _sign_runs_brute(d):
    """Exhaustive maximal-run scan: zeros break runs and belong to none."""
    runs = []
    i = 0
    n = len(d)
    while i < n:
        if d[i] == 0:
            i += 1
            continue
        s = 1 if d[i] > 0 else -1
        j = i
        while j < n and (d[j] > 0) == (s > 0) and d[j] != 0:
            j += 1
        runs.append((i, j, s))
        i = j
    if not runs:
        return (
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )
    a, b, c = zip(*runs)
    return np.asarray(a, np.int64), np.asarray(b, np.int64), np.asarray(c, np.int64)


@backends()
@pytest.mark.parametrize(
    "d",
    [
        [],
        [0.0],
        [0.0, 0.0],
        [1.0],
        [-1.0],
        [1.0, 1.0, -1.0],
        [1.0, 0.0, 1.0],
        [0.0, 2.0, 3.0, 0.0, -1.0, -1.0, 0.0],
        [-1.0, 1.0, -1.0, 1.0],
    ],
)
def test_sign_runs_hand_cases(impl, d):
    arr = np.asarray(d, dtype=np.float64)
    got = impl.sign_runs(np.ascontiguousarray(arr))
    want = _sign_runs_brute(arr)
    for g, w in zip(got, want):
        np.testing.assert_array_equal(g, w)


@backends()
def test_sign_runs_random_vs_brute(impl, rng):
    for _ in range(300):
        n = int(rng.integers(0, 20))
        d = rng.choice([-2.0, -1.0, 0.0, 0.0, 1.0, 2.0], size=n)
        got = impl.sign_runs(np.ascontiguousarray(d))
        want = _sign_runs_brute(d)
        for g, w in zip(got, want):
            np.testing.assert_array_equal(g, w)


@pytest.mark.skipif(not HAVE_C, reason="compiled backend unavailable")
class TestBackendParity:
    """The two implementations must agree to float round-off on shared
    inputs. Summation order differs (pairwise vs sequential), so the
    comparison is rtol-based."""

    def test_softmax_parity(self, rng):
        x = rng.normal(0, 4, size=(50, 23))
        gy = rng.normal(size=(50, 23))
        yp = _pykernels.softmax_fwd(np.ascontiguousarray(x))
        yc = _ckernels.softmax_fwd(np.ascontiguousarray(x))
        np.testing.assert_allclose(yc, yp, rtol=PARITY_RTOL, atol=1e-300)
        gp = _pykernels.softmax_bwd(np.ascontiguousarray(yp), np.ascontiguousarray(gy))
        gc = _ckernels.softmax_bwd(np.ascontiguousarray(yc), np.ascontiguousarray(gy))
        np.testing.assert_allclose(gc, gp, rtol=1e-11, atol=1e-15)

    def test_layer_norm_parity(self, rng):
        x = rng.normal(2, 3, size=(40, 19))
        gy = rng.normal(size=(40, 19))
        hp, rp = _pykernels.layer_norm_fwd(np.ascontiguousarray(x), 1e-5)
        hc, rc = _ckernels.layer_norm_fwd(np.ascontiguousarray(x), 1e-5)
        np.testing.assert_allclose(hc, hp, rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(rc, rp, rtol=PARITY_RTOL)
        gp_ = _pykernels.layer_norm_bwd(hp, rp, np.ascontiguousarray(gy))
        gc_ = _ckernels.layer_norm_bwd(hc, rc, np.ascontiguousarray(gy))
        np.testing.assert_allclose(gc_, gp_, rtol=1e-9, atol=1e-12)

    def test_adam_parity(self, rng):
        n = 512
        wp = rng.normal(size=n)
        wc = wp.copy()
        mp = np.zeros(n)
        mc = np.zeros(n)
        vp = np.zeros(n)
        vc = np.zeros(n)
        for t in range(1, 6):
            g = rng.normal(size=n)
            _pykernels.adam_update(wp, g.copy(), mp, vp, t, 3e-4, 0.9, 0.999, 1e-8, 0.01)
            _ckernels.adam_update(wc, g.copy(), mc, vc, t, 3e-4, 0.9, 0.999, 1e-8, 0.01)
        np.testing.assert_allclose(wc, wp, rtol=PARITY_RTOL, atol=1e-300)
        np.testing.assert_allclose(mc, mp, rtol=PARITY_RTOL, atol=1e-300)
        np.testing.assert_allclose(vc, vp, rtol=PARITY_RTOL, atol=1e-300)

    def test_sign_runs_parity(self, rng):
        for _ in range(100):
            d = rng.choice([-1.0, 0.0, 1.0], size=int(rng.integers(0, 64)))
            got_p = _pykernels.sign_runs(np.ascontiguousarray(d))
            got_c = _ckernels.sign_runs(np.ascontiguousarray(d))
            for gp_, gc_ in zip(got_p, got_c):
                np.testing.assert_array_equal(gc_, gp_)
