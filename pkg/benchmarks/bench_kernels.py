#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the convolution forward/backward kernels and the GELU pair on shapes
taken from the default (224) and desk-scale (64) models, reports per-call
times for both backends, and verifies they agree numerically. Select the
backend used by the package itself with AGEGRAD_BACKEND=numba|numpy.
"""

import argparse
import time

import numpy as np

from agegrad.kernels import numba_backend, numpy_backend

CONV_CASES = [
    # name, input shape, weight shape, stride, groups
    ("stem 224", (4, 3, 224, 224), (96, 3, 4, 4), 4, 1),
    ("dw7x7 56x56", (4, 96, 62, 62), (96, 1, 7, 7), 1, 96),
    ("dw7x7 14x14", (16, 96, 20, 20), (96, 1, 7, 7), 1, 96),
    ("pointwise 4x", (16, 96, 16, 16), (384, 96, 1, 1), 1, 1),
    ("downsample", (16, 96, 16, 16), (192, 96, 2, 2), 2, 1),
    ("grouped g=4", (8, 16, 18, 18), (32, 4, 3, 3), 1, 4),
]


def _time(fn, budget=0.5):
    fn()
    t0 = time.perf_counter()
    n = 0
    while time.perf_counter() - t0 < budget:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n * 1e3


def bench_conv(budget: float) -> None:
    print(f"{'case':16s} {'kernel':8s} {'numpy ms':>9s} {'numba ms':>9s} {'speedup':>8s}")
    rng = np.random.default_rng(0)
    for name, xs, ws, stride, groups in CONV_CASES:
        x = rng.normal(size=xs).astype(np.float32)
        w = (rng.normal(size=ws) * 0.1).astype(np.float32)
        out = numpy_backend.conv2d_forward(x, w, stride, groups)
        g = np.ascontiguousarray(out)
        calls = {
            "forward": lambda m: m.conv2d_forward(x, w, stride, groups),
            "grad_in": lambda m: m.conv2d_grad_input(g, w, stride, groups, xs[2], xs[3]),
            "grad_k": lambda m: m.conv2d_grad_kernel(x, g, stride, groups, ws[2], ws[3]),
        }
        for kind, call in calls.items():
            ref = call(numpy_backend)
            jit = call(numba_backend)
            scale = max(float(np.abs(ref).max()), 1.0)
            err = float(np.abs(ref.astype(np.float64) - jit.astype(np.float64)).max()) / scale
            assert err < 1e-5, f"{name}/{kind}: backends disagree by {err:.2e}"
            t_np = _time(lambda: call(numpy_backend), budget)
            t_nb = _time(lambda: call(numba_backend), budget)
            print(f"{name:16s} {kind:8s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.2f}x")


def bench_gelu(budget: float) -> None:
    rng = np.random.default_rng(1)
    for n in (100_000, 1_000_000):
        x = rng.normal(size=n).astype(np.float32)
        ref, phi = numpy_backend.gelu_forward(x)
        jit, phij = numba_backend.gelu_forward(x)
        assert float(np.abs(ref - jit).max()) < 1e-6
        g = rng.normal(size=n).astype(np.float32)
        assert float(np.abs(numpy_backend.gelu_backward(x, phi, g) - numba_backend.gelu_backward(x, phij, g)).max()) < 1e-6
        t_np = _time(lambda: numpy_backend.gelu_forward(x), budget)
        t_nb = _time(lambda: numba_backend.gelu_forward(x), budget)
        print(f"{'gelu n=' + str(n):16s} {'forward':8s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--budget", type=float, default=0.5, help="seconds of timing per call")
    args = parser.parse_args()
    bench_conv(args.budget)
    bench_gelu(args.budget)


if __name__ == "__main__":
    main()
