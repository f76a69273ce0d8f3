"""Ablation sweeps: train every cell of a config grid, tabulate MAEs.

A grid is a mapping from config key to a list of values; cells are the
cross product. Every cell trains with the shared seed and data, records its
best validation MAE and test-split MAE, and failures are captured per row
without stopping the sweep. Presets mirror the head-depth, head-size, and
scheduler comparisons of the source study.
"""

from __future__ import annotations

import csv
import itertools
import os
import time
from dataclasses import dataclass, replace
from typing import Optional

from . import config as C
from .checkpoint import load_checkpoint
from .errors import AgegradError, ConfigError
from .metrics import mae_metric
from .train import evaluate_split, prepare_manifest, run_training

PRESETS: dict[str, dict[str, str]] = {
    "linear-layers": {"model.head_layers": "1|2"},
    "head-size": {"model.head_layers": "2", "model.head_hidden": "32|64|128|192|256"},
    "scheduler": {"schedule.kind": "warmup_cosine|manual"},
}
RESULTS_NAME = "ablation.csv"


@dataclass
class CellResult:
    overrides: dict[str, str]
    best_val_mae: Optional[float]
    test_mae: Optional[float]
    seconds: float = 0.0
    error: str = ""


def parse_grid(grid_values: dict[str, str]) -> dict[str, list[str]]:
    grid = {}
    for key, text in grid_values.items():
        values = [v.strip() for v in text.split("|") if v.strip()]
        if not values:
            raise ConfigError(f"grid key {key} has no values")
        grid[key] = values
    return grid


def grid_cells(grid: dict[str, list[str]]) -> list[dict[str, str]]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def run_ablation(
    base: C.TrainConfig,
    grid: dict[str, list[str]],
    out_dir: str,
    single_thread: bool = False,
    quiet: bool = True,
) -> list[CellResult]:
    if not grid:
        raise ConfigError("ablation needs at least one grid.* key (or a --preset)")
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for i, overrides in enumerate(grid_cells(grid)):
        cell_dir = os.path.join(out_dir, f"cell_{i:03d}")
        cfg = replace(base)
        # cells must not share mutable sub-configs
        cfg.model = replace(base.model)
        cfg.loss = replace(base.loss)
        cfg.schedule = replace(base.schedule)
        cfg.aug = replace(base.aug)
        t_cell = time.perf_counter()
        try:
            C.apply_values(cfg, overrides)
            cfg.validate()
            outcome = run_training(cfg, cell_dir, single_thread=single_thread, quiet=quiet)
            ckpt = load_checkpoint(outcome.checkpoint_path)
            manifest = prepare_manifest(cfg)
            preds, targets = evaluate_split(
                cfg.model, ckpt.params, manifest, "test", cfg.batch_size,
                mean=cfg.normalize_mean, std=cfg.normalize_std,
            )
            results.append(
                CellResult(
                    overrides, outcome.best_val_mae, mae_metric(preds, targets),
                    seconds=time.perf_counter() - t_cell,
                )
            )
        except (AgegradError, OSError) as exc:
            results.append(CellResult(overrides, None, None, seconds=time.perf_counter() - t_cell, error=str(exc)))
    write_results(os.path.join(out_dir, RESULTS_NAME), results)
    return results


def write_results(path: str, results: list[CellResult]) -> None:
    keys = sorted({k for r in results for k in r.overrides})
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys + ["best_val_mae", "test_mae", "seconds", "error"])
        for r in results:
            row = [r.overrides.get(k, "") for k in keys]
            row.append("" if r.best_val_mae is None else f"{r.best_val_mae:.6f}")
            row.append("" if r.test_mae is None else f"{r.test_mae:.6f}")
            row.append(f"{r.seconds:.1f}")
            row.append(r.error.replace("\n", " "))
            writer.writerow(row)
    os.replace(tmp, path)
