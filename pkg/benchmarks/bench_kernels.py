"""Compare the compiled kernels against the pure-python reference.

Run from the repository root:

    python benchmarks/bench_kernels.py [--repeats 7]

Times both backends on identical inputs for every kernel and reports the
median wall time plus the speedup. The numbers motivate keeping a compiled
extension for exactly these functions: they sit inside the training loop
(softmax/layer-norm in every attention block, the optimizer step on every
parameter) or inside descriptor extraction (sign runs on every signal).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from smilefusion.kernels import _pykernels

try:
    from smilefusion.kernels import _ckernels
except ImportError:
    _ckernels = None


def _bench(fn, args, repeats: int) -> float:
    # warm up once, then take the median of `repeats` timings
    fn(*args)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def _cases(rng):
    x = rng.normal(size=(4096, 64))
    y = _pykernels.softmax_fwd(x)
    gy = rng.normal(size=x.shape)
    xhat, rstd = _pykernels.layer_norm_fwd(x, 1e-5)
    n = 200_000
    w = rng.normal(size=n)
    g = rng.normal(size=n)
    m = np.zeros(n)
    v = np.zeros(n)
    d = rng.normal(size=100_000)
    d[rng.random(d.shape) < 0.1] = 0.0
    return [
        ("softmax_fwd", (np.ascontiguousarray(x),)),
        ("softmax_bwd", (np.ascontiguousarray(y), np.ascontiguousarray(gy))),
        ("layer_norm_fwd", (np.ascontiguousarray(x), 1e-5)),
        ("layer_norm_bwd", (np.ascontiguousarray(xhat), np.ascontiguousarray(rstd),
                            np.ascontiguousarray(gy))),
        ("adam_update", (w, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8, 1e-2)),
        ("sign_runs", (np.ascontiguousarray(d),)),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = _cases(rng)

    print(f"{'kernel':16s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, fn_args in cases:
        py_fn = getattr(_pykernels, name)
        # adam_update mutates its buffers; give each backend private copies
        py_args = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in fn_args)
        py_t = _bench(py_fn, py_args, args.repeats)
        if _ckernels is None:
            print(f"{name:16s} {py_t * 1e3:10.3f}ms {'missing':>12s}")
            continue
        cy_fn = getattr(_ckernels, name)
        cy_args = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in fn_args)
        cy_t = _bench(cy_fn, cy_args, args.repeats)
        print(
            f"{name:16s} {py_t * 1e3:10.3f}ms {cy_t * 1e3:10.3f}ms "
            f"{py_t / cy_t:7.2f}x"
        )
    if _ckernels is None:
        print("compiled backend not built; install the package to compare")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
