"""Convolution kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``AGEGRAD_BACKEND``
environment variable: ``numba`` (require the JIT backend), ``numpy`` (force
the vectorized fallback), or ``auto`` (default: numba when importable).
Both backends implement the same three functions; the benchmark under
``benchmarks/`` compares them head to head.

Padding is applied by the caller; these kernels see already-padded inputs.
"""

import os

from . import numpy_backend

_requested = os.environ.get("AGEGRAD_BACKEND", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"AGEGRAD_BACKEND must be auto, numba, or numpy, got {_requested!r}")

if _requested in ("auto", "numba"):
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"
else:
    _impl = numpy_backend
    BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_kernel = _impl.conv2d_grad_kernel
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
