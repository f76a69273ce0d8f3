"""Evaluation metrics: MAE, cumulative score, and the error CDF with AUC.

These are plain numpy functions with no gradient involvement. CS(k) counts
absolute errors less than or equal to k (boundary inclusive) as a
percentage; the CDF is CS/100 over a threshold grid and AUC is its
trapezoidal integral over [0, max threshold] normalized by the max
threshold.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    mae: float
    cs: dict[float, float] = field(default_factory=dict)
    cdf: list[tuple[float, float]] = field(default_factory=list)
    auc: float = 0.0


def _errors(preds, targets) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.size == 0:
        raise ContractError("metrics need at least one sample")
    if preds.shape != targets.shape:
        raise ContractError(f"metrics need equal lengths, got {preds.size} and {targets.size}")
    return np.abs(preds - targets)


def mae_metric(preds, targets) -> float:
    e = _errors(preds, targets)
    # sequential summation (cumsum) matches a naive accumulation loop bitwise
    return float(e.cumsum()[-1] / e.size)


def cs_metric(preds, targets, k: float) -> float:
    if k < 0:
        raise ContractError(f"cs_metric threshold must be >= 0, got {k}")
    e = _errors(preds, targets)
    return float(100.0 * np.count_nonzero(e <= k) / e.size)


def error_cdf(preds, targets, thresholds) -> MetricsReport:
    """CDF fractions at each threshold plus normalized trapezoidal AUC."""
    thresholds = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if thresholds.size == 0:
        raise ContractError("error_cdf needs at least one threshold")
    if np.any(thresholds < 0) or np.any(np.diff(thresholds) <= 0):
        raise ContractError("thresholds must be strictly increasing and >= 0")
    e = _errors(preds, targets)
    fractions = np.array([np.count_nonzero(e <= t) / e.size for t in thresholds])
    # integrate over [0, max]; prepend the t=0 point when the grid starts later
    ts, fs = thresholds, fractions
    if ts[0] > 0.0:
        ts = np.concatenate(([0.0], ts))
        fs = np.concatenate(([np.count_nonzero(e <= 0.0) / e.size], fs))
    auc = float(np.trapezoid(fs, ts) / ts[-1]) if ts[-1] > 0 else float(fs[-1])
    return MetricsReport(
        mae=float(e.mean()),
        cdf=[(float(t), float(f)) for t, f in zip(thresholds, fractions)],
        auc=auc,
    )


def full_report(preds, targets, cs_ks=range(1, 11), cdf_step: float = 0.5, cdf_max: float = 15.0) -> MetricsReport:
    """MAE, CS at integer thresholds, CDF grid, and AUC in one report."""
    thresholds = np.arange(0.0, cdf_max + cdf_step / 2, cdf_step)
    report = error_cdf(preds, targets, thresholds)
    report.cs = {float(k): cs_metric(preds, targets, float(k)) for k in cs_ks}
    return report


def write_report_csv(path: str, report: MetricsReport) -> None:
    """metric,value rows: mae, auc, cs@k per threshold, cdf@t per grid point."""
    lines = ["metric,value", f"mae,{report.mae:.6f}", f"auc,{report.auc:.6f}"]
    for k in sorted(report.cs):
        label = int(k) if float(k).is_integer() else k
        lines.append(f"cs@{label},{report.cs[k]:.6f}")
    for t, frac in report.cdf:
        lines.append(f"cdf@{t:.6g},{frac:.6f}")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def write_predictions_csv(path: str, paths, targets, preds) -> None:
    lines = ["path,age,prediction"]
    for p, age, pred in zip(paths, targets, preds):
        lines.append(f"{p},{float(age):.6f},{float(pred):.6f}")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
