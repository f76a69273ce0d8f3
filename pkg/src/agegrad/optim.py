"""AdamW with decoupled weight decay, LR schedules, and early stopping.

The update per parameter p with gradient g is

    m <- b1*m + (1-b1)*g          mhat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2        vhat = v / (1 - b2^t)
    p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)

so zero gradients with decay shrink p geometrically by (1 - lr*wd) per step.
Schedulers are pure functions of (spec, step) except reduce-on-plateau,
which is a pure function of (spec, validation-MAE history).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .model import ParamStore

SCHEDULE_KINDS = ("warmup_cosine", "one_cycle", "cosine_annealing", "reduce_on_plateau", "manual")
WARMUP_FLOOR_DIV = 100.0
ONE_CYCLE_START_DIV = 25.0
ONE_CYCLE_FINAL_DIV = 1e4
ONE_CYCLE_RAMP_FRACTION = 0.3


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    decay_exclude: frozenset = frozenset()


def decay_excluded(name: str) -> bool:
    """Norm affine parameters and biases are excluded from weight decay."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("bias", "beta", "gamma")


def default_decay_exclude(params: ParamStore) -> frozenset:
    return frozenset(n for n in params.names() if decay_excluded(n))


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptimState, lr: float) -> None:
    """One in-place AdamW update of every parameter."""
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    if set(grads) != set(params.names()):
        missing = sorted(set(params.names()) - set(grads))
        extra = sorted(set(grads) - set(params.names()))
        raise ContractError(f"gradients do not cover the parameter set (missing {missing}, extra {extra})")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.entries.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        dt = p.data.dtype
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= dt.type(b1)
        m += dt.type(1.0 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1.0 - b2) * (g * g)
        update = (m / dt.type(bc1)) / (np.sqrt(v / dt.type(bc2)) + dt.type(state.eps))
        wd = 0.0 if name in state.decay_exclude else state.weight_decay
        if wd:
            update = update + dt.type(wd) * p.data
        p.data -= dt.type(lr) * update


@dataclass
class ScheduleSpec:
    kind: str = "warmup_cosine"
    base_lr: float = 1e-3
    min_lr: float = 0.0
    warmup_steps: int = 0
    total_steps: int = 1
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    manual: tuple = ()

    def validate(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.min_lr > self.base_lr:
            raise ConfigError(f"min_lr {self.min_lr} exceeds base_lr {self.base_lr}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} must lie in [0, total_steps={self.total_steps}]"
            )
        if self.kind == "manual":
            # empty table means a constant base_lr throughout
            steps = [s for s, _ in self.manual]
            if steps != sorted(steps):
                raise ConfigError("manual schedule table must be ordered by step")


def _cosine(base: float, floor: float, progress: float) -> float:
    if progress <= 0.0:
        return base
    if progress >= 1.0:
        return floor
    return floor + (base - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_at(spec: ScheduleSpec, step: int, signal: Optional[Sequence[float]] = None) -> float:
    """Learning rate at an optimizer step.

    ``signal`` is the sequence of per-epoch validation MAEs observed so far;
    it is required (and alone determines the result) for reduce_on_plateau.
    """
    spec.validate()
    if step < 0:
        raise ContractError(f"step must be >= 0, got {step}")
    if spec.kind == "reduce_on_plateau":
        if signal is None:
            raise ContractError("reduce_on_plateau requires the validation-MAE history")
        return _plateau_lr(spec, signal)
    if spec.kind == "manual":
        lr = spec.base_lr
        for s, value in spec.manual:
            if step >= s:
                lr = value
        return lr
    if spec.kind == "warmup_cosine":
        if step < spec.warmup_steps:
            floor = spec.base_lr / WARMUP_FLOOR_DIV
            return spec.base_lr - (spec.base_lr - floor) * (1.0 - step / spec.warmup_steps)
        span = spec.total_steps - spec.warmup_steps
        progress = (step - spec.warmup_steps) / span if span > 0 else 1.0
        return _cosine(spec.base_lr, spec.min_lr, progress)
    if spec.kind == "cosine_annealing":
        progress = step / spec.total_steps if spec.total_steps > 0 else 1.0
        return _cosine(spec.base_lr, spec.min_lr, progress)
    # one_cycle: linear ramp to base_lr at 30% of total, cosine down to base_lr/1e4
    peak_step = ONE_CYCLE_RAMP_FRACTION * spec.total_steps
    start = spec.base_lr / ONE_CYCLE_START_DIV
    final = spec.base_lr / ONE_CYCLE_FINAL_DIV
    if step < peak_step:
        return start + (spec.base_lr - start) * (step / peak_step)
    span = spec.total_steps - peak_step
    progress = (step - peak_step) / span if span > 0 else 1.0
    return _cosine(spec.base_lr, final, progress)


def _plateau_lr(spec: ScheduleSpec, signal: Sequence[float]) -> float:
    """Replay the plateau rule over the full signal history."""
    lr = spec.base_lr
    best = math.inf
    bad = 0
    for mae in signal:
        if mae < best * (1.0 - spec.plateau_threshold):
            best = mae
            bad = 0
        else:
            bad += 1
            if bad >= spec.plateau_patience:
                lr = max(lr * spec.plateau_factor, spec.min_lr)
                bad = 0
    return lr


@dataclass
class EarlyStopState:
    patience: int = 3
    best_val_mae: float = math.inf
    epochs_since_improvement: int = 0


def early_stop_update(state: EarlyStopState, val_mae: float) -> tuple[EarlyStopState, bool]:
    """Advance the early-stopping counter; improvement means strict decrease."""
    if val_mae < 0:
        raise ContractError(f"validation MAE must be >= 0, got {val_mae}")
    if val_mae < state.best_val_mae:
        state.best_val_mae = val_mae
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    return state, state.epochs_since_improvement >= state.patience
