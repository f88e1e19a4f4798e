"""Numeric kernels with a compiled fast path and a numpy fallback.

The compiled extension (_ckernels, built from Cython) is preferred when it
imports cleanly. Setting SMILEFUSION_PURE_PYTHON=1 forces the numpy
implementations, which are the reference for parity tests and the safety
net on platforms without a compiler.

All kernels take C-contiguous float64 arrays. Callers are responsible for
layout; these functions do no conversion.
"""

import os

from . import _pykernels

if os.environ.get("SMILEFUSION_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
adam_update = _impl.adam_update
sign_runs = _impl.sign_runs

__all__ = [
    "BACKEND",
    "softmax_fwd",
    "softmax_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "adam_update",
    "sign_runs",
]
