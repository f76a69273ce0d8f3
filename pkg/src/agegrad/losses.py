"""Training objectives for age regression.

All losses map a predicted and a target 1-d tensor of equal length to a
differentiable scalar. The adaptive loss is

    L = (1 + sigma)/N * sum(e_i^2 / (|e_i| + sigma)),   e_i = y_i - yhat_i

which behaves like a scaled MSE for small errors and like a scaled MAE for
large ones; sigma controls the crossover (|e| = 1 maps to exactly |e| when
sigma = 2). The |e| kink uses subgradient 0 at e = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, abs_, add, div, mean, mul, sub

LOSS_KINDS = ("adaptive", "mae", "mse", "huber", "weighted_mse")


@dataclass
class LossSpec:
    kind: str = "adaptive"
    sigma: float = 2.0
    delta: float = 1.0
    weights: Optional[dict[int, float]] = None

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.sigma <= 0:
            raise ConfigError(f"loss sigma must be > 0, got {self.sigma}")
        if self.delta <= 0:
            raise ConfigError(f"loss delta must be > 0, got {self.delta}")
        if self.weights is not None and any(w <= 0 for w in self.weights.values()):
            raise ConfigError("all weighted_mse weights must be > 0")


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.ndim != 1 or target.ndim != 1 or pred.shape != target.shape:
        raise ShapeError(f"loss expects equal 1-d tensors, got {pred.shape} and {target.shape}")
    if pred.size == 0:
        raise ContractError("loss needs at least one sample")


def adaptive_loss(pred: Tensor, target: Tensor, sigma: float = 2.0) -> Tensor:
    _check_pair(pred, target)
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    e = sub(pred, target)
    ratio = div(mul(e, e), add(abs_(e), Tensor(sigma, dtype=pred.dtype)))
    return mul(mean(ratio), Tensor(1.0 + sigma, dtype=pred.dtype))


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_pair(pred, target)
    return mean(abs_(sub(pred, target)))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_pair(pred, target)
    e = sub(pred, target)
    return mean(mul(e, e))


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean of e^2/2 inside |e| <= delta, delta*(|e| - delta/2) outside."""
    _check_pair(pred, target)
    if delta <= 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    e = sub(pred, target)
    inside = (np.abs(e.data) <= delta).astype(e.dtype)
    inside_t = Tensor(inside)
    outside_t = Tensor(1.0 - inside)
    quad = mul(mul(e, e), Tensor(0.5, dtype=pred.dtype))
    lin = mul(
        sub(abs_(e), Tensor(delta / 2.0, dtype=pred.dtype)), Tensor(delta, dtype=pred.dtype)
    )
    return mean(add(mul(quad, inside_t), mul(lin, outside_t)))


def age_bin(age: float) -> int:
    return int(np.floor(age))


def inverse_frequency_weights(ages) -> dict[int, float]:
    """Weight per integer age bin, proportional to N/count and mean-normalized to 1."""
    ages = np.asarray(ages, dtype=np.float64)
    if ages.size == 0:
        raise ContractError("cannot derive weights from an empty age list")
    bins, counts = np.unique(np.floor(ages).astype(np.int64), return_counts=True)
    raw = ages.size / counts
    raw = raw / raw.mean()
    return {int(b): float(w) for b, w in zip(bins, raw)}


def weighted_mse_loss(pred: Tensor, target: Tensor, weights: dict[int, float]) -> Tensor:
    _check_pair(pred, target)
    w = np.empty(target.size, dtype=pred.dtype)
    for i, age in enumerate(target.data):
        b = age_bin(float(age))
        if b not in weights:
            raise ConfigError(f"weighted_mse has no weight for age bin {b}")
        w[i] = weights[b]
    e = sub(pred, target)
    return mean(mul(mul(e, e), Tensor(w)))


def standard_loss(pred: Tensor, target: Tensor, spec: LossSpec) -> Tensor:
    """Dispatch on LossSpec.kind."""
    spec.validate()
    if spec.kind == "adaptive":
        return adaptive_loss(pred, target, spec.sigma)
    if spec.kind == "mae":
        return mae_loss(pred, target)
    if spec.kind == "mse":
        return mse_loss(pred, target)
    if spec.kind == "huber":
        return huber_loss(pred, target, spec.delta)
    if spec.weights is None:
        raise ConfigError("weighted_mse requires a weight table")
    return weighted_mse_loss(pred, target, spec.weights)
