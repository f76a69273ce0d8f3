"""Named gradient-check suite covering every layer type and the full model.

Each check compares the float32 analytic gradient of a small instance
against float64 central differences. The AGEGRAD_GRADCHECK_CORRUPT
environment variable (or the ``corrupt`` argument) names a check whose
input is routed through an identity op with a deliberately wrong backward
rule; that check must then fail, proving the harness detects bad gradients.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import model as M
from . import tensor as T
from .gradcheck import GradCheckReport, grad_check

CORRUPT_ENV = "AGEGRAD_GRADCHECK_CORRUPT"
_CORRUPT_FACTOR = 1.01


def _corrupt_identity(t: T.Tensor) -> T.Tensor:
    # identity forward, gradient inflated by 1%: numeric oracle must catch it
    return T._record("corrupt", (t,), t.data, lambda g: (g * _CORRUPT_FACTOR,))


@dataclass
class CheckResult:
    name: str
    report: GradCheckReport
    seconds: float


def _reduced_spec() -> M.ModelSpec:
    return M.ModelSpec(
        variant="hybrid",
        input_size=32,
        stage_depths=(1, 1, 1, 1),
        stage_dims=(8, 16, 32, 64),
        encoder_blocks=2,
        token_dim=16,
        token_count=4,
        num_heads=2,
        head_layers=2,
        head_hidden=32,
    )


def _dtype_params(spec: M.ModelSpec, seed: int):
    ps32 = M.init_params(spec, seed)
    ps64 = ps32.astype(np.float64)
    return lambda t: ps32 if t.dtype == np.float32 else ps64


def _const(arr: np.ndarray) -> Callable[[T.Tensor], T.Tensor]:
    return lambda t: T.Tensor(arr, dtype=t.dtype)


def _proj_sum(out: T.Tensor, proj: np.ndarray) -> T.Tensor:
    """Random projection keeps the scalar O(1) so differencing stays clean."""
    return T.sum_(T.mul(out, T.Tensor(proj, dtype=out.dtype)))


def build_checks(seed: int = 0) -> dict[str, tuple[Callable, np.ndarray, Optional[int]]]:
    """name -> (scalar function, input array, numeric sample size or None)."""
    rng = np.random.default_rng(seed)
    f32 = np.float32
    checks: dict[str, tuple[Callable, np.ndarray, Optional[int]]] = {}

    w_mat = rng.normal(size=(5, 3)).astype(f32)
    p_mat = rng.normal(size=(4, 3)).astype(f32)
    checks["matmul"] = (
        lambda t: _proj_sum(T.matmul(t, _const(w_mat)(t)), p_mat),
        rng.normal(size=(4, 5)).astype(f32),
        None,
    )

    x_img = rng.normal(size=(2, 4, 8, 8)).astype(f32)
    w_dw = (rng.normal(size=(4, 1, 7, 7)) * 0.2).astype(f32)
    p_dw = rng.normal(size=(2, 4, 8, 8)).astype(f32)
    checks["conv2d_depthwise"] = (
        lambda t: _proj_sum(T.conv2d(t, _const(w_dw)(t), stride=1, padding=3, groups=4), p_dw),
        x_img,
        None,
    )
    w_pw = (rng.normal(size=(6, 4, 1, 1)) * 0.3).astype(f32)
    b_pw = rng.normal(size=6).astype(f32)
    p_pw = rng.normal(size=(2, 6, 8, 8)).astype(f32)
    checks["conv2d_pointwise"] = (
        lambda t: _proj_sum(T.conv2d(_const(x_img)(t), t, bias=_const(b_pw)(t)), p_pw),
        w_pw,
        None,
    )
    w_st = (rng.normal(size=(6, 4, 4, 4)) * 0.2).astype(f32)
    p_st = rng.normal(size=(2, 6, 2, 2)).astype(f32)
    checks["conv2d_strided"] = (
        lambda t: _proj_sum(T.conv2d(t, _const(w_st)(t), stride=4), p_st),
        x_img,
        None,
    )

    gamma = rng.normal(size=8).astype(f32)
    beta = rng.normal(size=8).astype(f32)
    p_ln = rng.normal(size=(3, 8)).astype(f32)
    checks["layer_norm"] = (
        lambda t: _proj_sum(T.layer_norm(t, 8, _const(gamma)(t), _const(beta)(t)), p_ln),
        rng.normal(size=(3, 8)).astype(f32),
        None,
    )

    p_gelu = rng.normal(size=(4, 5)).astype(f32)
    checks["gelu"] = (lambda t: _proj_sum(T.gelu(t), p_gelu), rng.normal(size=(4, 5)).astype(f32), None)

    p_sm = rng.normal(size=(3, 6)).astype(f32)
    checks["softmax"] = (
        lambda t: _proj_sum(T.softmax(t, -1), p_sm),
        rng.normal(size=(3, 6)).astype(f32),
        None,
    )

    enc_spec = M.ModelSpec(
        variant="vit", input_size=32, encoder_blocks=1, token_dim=16, token_count=4, num_heads=2
    )
    enc_params = _dtype_params(enc_spec, seed + 1)
    p_tok = rng.normal(size=(1, 4, 16)).astype(f32)
    checks["attention_block"] = (
        lambda t: _proj_sum(M._attention(t, enc_params(t), "encoder.block0.attn", enc_spec), p_tok),
        rng.normal(size=(1, 4, 16)).astype(f32),
        None,
    )

    blk_spec = M.ModelSpec(
        variant="hybrid", input_size=32, stage_depths=(1, 1, 1, 1), stage_dims=(4, 8, 16, 32),
        encoder_blocks=1, token_dim=16, token_count=2, num_heads=2,
    )
    blk_params = _dtype_params(blk_spec, seed + 2)
    p_blk = rng.normal(size=(1, 4, 8, 8)).astype(f32)
    checks["convnext_block"] = (
        lambda t: _proj_sum(
            M.convnext_block_forward(t, blk_params(t), "backbone.stage0.block0", blk_spec), p_blk
        ),
        rng.normal(size=(1, 4, 8, 8)).astype(f32),
        None,
    )

    reduced = _reduced_spec()
    feats = rng.normal(size=(1, 64, 1, 1)).astype(f32)
    p_tok4 = rng.normal(size=(1, 4, 16)).astype(f32)
    for mode in ("learnable", "reshape"):
        bridge_spec = replace(reduced, bridge_mode=mode)
        bridge_params = _dtype_params(bridge_spec, seed + 3)
        checks[f"bridge_{mode}"] = (
            lambda t, s=bridge_spec, p=bridge_params: _proj_sum(M.bridge(t, s, p(t)), p_tok4),
            feats,
            None,
        )

    head_params = _dtype_params(reduced, seed + 4)
    checks["mlp_head"] = (
        lambda t: T.sum_(M.mlp_head_forward(t, head_params(t), reduced)),
        rng.normal(size=(2, 4, 16)).astype(f32),
        None,
    )

    full_params = _dtype_params(reduced, seed + 5)
    checks["full_hybrid_input"] = (
        lambda t: T.sum_(M.model_forward(t, reduced, full_params(t))),
        rng.normal(size=(1, 3, 32, 32)).astype(f32),
        60,
    )
    return checks


def check_full_model_params(
    step: float = 1e-3,
    tol: float = 1e-3,
    seed: int = 0,
    per_tensor_sample: int = 4,
    corrupt: bool = False,
) -> GradCheckReport:
    """Finite-difference sample of every parameter tensor of the reduced hybrid."""
    spec = _reduced_spec()
    ps32 = M.init_params(spec, seed)
    ps64 = ps32.astype(np.float64)
    rng = np.random.default_rng(seed + 9)
    x32 = T.Tensor(rng.normal(size=(1, 3, 32, 32)).astype(np.float32))
    x64 = T.Tensor(x32.data.astype(np.float64))

    worst = GradCheckReport(0.0, 0.0, True, 0)
    for name in ps32.names():
        def f(t, name=name):
            store = ps32 if t.dtype == np.float32 else ps64
            saved = store.entries[name]
            store.entries[name] = _corrupt_identity(t) if corrupt else t
            try:
                return T.sum_(M.model_forward(x32 if t.dtype == np.float32 else x64, spec, store))
            finally:
                store.entries[name] = saved

        report = grad_check(f, ps32[name].data, step=step, tol=tol, sample=per_tensor_sample, seed=seed)
        worst = GradCheckReport(
            max(worst.max_abs_err, report.max_abs_err),
            max(worst.max_rel_err, report.max_rel_err),
            worst.passed and report.passed,
            worst.checked + report.checked,
        )
    return worst


def run_all_checks(
    step: float = 1e-3, tol: float = 1e-3, seed: int = 0, corrupt: Optional[str] = None
) -> list[CheckResult]:
    if corrupt is None:
        corrupt = os.environ.get(CORRUPT_ENV) or None
    results = []
    for name, (f, x, sample) in build_checks(seed).items():
        fn = f
        if corrupt == name:
            fn = lambda t, _f=f: _f(_corrupt_identity(t))
        t0 = time.perf_counter()
        report = grad_check(fn, x, step=step, tol=tol, sample=sample, seed=seed)
        results.append(CheckResult(name, report, time.perf_counter() - t0))
    t0 = time.perf_counter()
    report = check_full_model_params(step=step, tol=tol, seed=seed, corrupt=corrupt == "full_hybrid_params")
    results.append(CheckResult("full_hybrid_params", report, time.perf_counter() - t0))
    return results
