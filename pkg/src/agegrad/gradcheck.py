"""Central-finite-difference verification of analytic gradients.

The analytic gradient comes from the tape at the tensor's own precision
(float32 in normal use). The numeric reference re-evaluates the function
on float64 copies so the oracle is tighter than the path it checks; pass
``oracle_dtype=None`` to difference at the input's own precision instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward, tape


@dataclass
class GradCheckReport:
    max_abs_err: float
    max_rel_err: float
    passed: bool
    checked: int


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-3,
    tol: float = 1e-3,
    oracle_dtype=np.float64,
    sample: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare d f(x) / dx against (f(x+h) - f(x-h)) / 2h element-wise.

    ``sample`` limits the numeric probe to that many seeded random elements,
    which keeps whole-model checks tractable; None probes every element.
    """
    if step <= 0:
        raise ContractError(f"grad_check: step must be positive, got {step}")
    base = np.ascontiguousarray(np.asarray(x))

    with tape() as g:
        xt = Tensor(base, requires_grad=True)
        out = f(xt)
        if out.size != 1:
            raise ContractError(f"grad_check: f must return a scalar, got shape {out.shape}")
        backward(out, g)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)

    probe = base.astype(oracle_dtype) if oracle_dtype is not None else base.copy()
    flat = probe.reshape(-1)
    n = flat.size
    if sample is not None and sample < n:
        idx = np.random.default_rng(seed).choice(n, size=sample, replace=False)
        idx.sort()
    else:
        idx = np.arange(n)

    numeric = np.empty(idx.size, dtype=np.float64)
    for pos, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(Tensor(probe)).item()
        flat[i] = orig - step
        f_minus = f(Tensor(probe)).item()
        flat[i] = orig
        numeric[pos] = (f_plus - f_minus) / (2.0 * step)

    picked = analytic[idx]
    abs_err = np.abs(picked - numeric)
    rel_err = _rel_err(picked, numeric)
    max_abs = float(abs_err.max()) if idx.size else 0.0
    max_rel = float(rel_err.max()) if idx.size else 0.0
    return GradCheckReport(max_abs, max_rel, bool(max_rel <= tol), int(idx.size))
