"""Training and evaluation loops over the synthetic-or-real manifest data.

One epoch runs forward/loss/backward/AdamW per batch with the learning rate
taken from the schedule at the global step, evaluates validation MAE, saves
the best-so-far checkpoint, and appends a TrainLog row. In single-thread
(reproducibility) mode the wall-seconds column is written as zero so two
identical runs produce byte-identical logs.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import data as D
from .checkpoint import load_into, save_checkpoint
from .config import AUTO, TrainConfig
from .errors import ConfigError
from .losses import LossSpec, inverse_frequency_weights, standard_loss
from .metrics import mae_metric
from .model import ModelSpec, ParamStore, init_params, model_forward
from .optim import (
    EarlyStopState,
    OptimState,
    ScheduleSpec,
    adamw_step,
    default_decay_exclude,
    early_stop_update,
    lr_at,
)
from .tensor import Tensor, backward, reshape, tape

TRAINLOG_HEADER = "epoch,train_loss,val_loss,val_mae,lr,seconds"
DEFAULT_WARMUP_FRACTION = 0.1


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float
    lr: float
    seconds: float

    def format(self) -> str:
        return (
            f"{self.epoch},{self.train_loss:.6f},{self.val_loss:.6f},"
            f"{self.val_mae:.6f},{self.lr:.10g},{self.seconds:.3f}"
        )


@dataclass
class TrainResult:
    best_val_mae: float
    best_epoch: int
    rows: list[EpochRow]
    checkpoint_path: str
    log_path: str
    schedule: ScheduleSpec
    steps_per_epoch: int


def resolve_schedule(spec: ScheduleSpec, steps_per_epoch: int, max_epochs: int) -> ScheduleSpec:
    """Fill AUTO step counts from the data size: total = epochs*steps, warmup = 10%."""
    total = spec.total_steps
    if total == AUTO:
        total = steps_per_epoch * max_epochs
    warmup = spec.warmup_steps
    if warmup == AUTO:
        warmup = int(round(DEFAULT_WARMUP_FRACTION * total)) if spec.kind == "warmup_cosine" else 0
    resolved = replace(spec, warmup_steps=warmup, total_steps=total)
    resolved.validate()
    return resolved


def resolve_loss(cfg: TrainConfig, manifest: D.SampleManifest) -> LossSpec:
    loss = replace(cfg.loss)
    if loss.kind == "weighted_mse" and loss.weights is None:
        if cfg.loss_weights == "auto":
            loss.weights = inverse_frequency_weights([r.age for r in manifest.records])
        else:
            loss.weights = _load_weight_table(cfg.loss_weights)
    return loss


def _load_weight_table(path: str) -> dict[int, float]:
    if not os.path.isfile(path):
        raise ConfigError(f"loss.weights file not found: {path}")
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                bin_text, weight_text = line.split(",")
                table[int(bin_text)] = float(weight_text)
            except ValueError:
                raise ConfigError(f"loss.weights {path} line {lineno}: expected bin,weight") from None
    if not table:
        raise ConfigError(f"loss.weights file {path} is empty")
    return table


def resolve_augmentation(cfg: TrainConfig, manifest: D.SampleManifest) -> D.AugmentationSpec:
    if not cfg.aug_enabled:
        return D.AugmentationSpec.disabled(size=cfg.model.input_size)
    aug = replace(cfg.aug, size=cfg.model.input_size)
    if cfg.erase_fill == "auto":
        if aug.erase_p > 0:
            aug.erase_fill = D.dataset_channel_mean(manifest, "train")
    else:
        parts = tuple(float(p) for p in cfg.erase_fill.split(","))
        aug.erase_fill = parts * 3 if len(parts) == 1 else parts
    aug.validate()
    return aug


def prepare_manifest(cfg: TrainConfig) -> D.SampleManifest:
    if not cfg.manifest:
        raise ConfigError("data.manifest is required")
    manifest = D.load_manifest(cfg.manifest)
    return D.split_dataset(manifest, cfg.ratios, cfg.seed)


def evaluate_split(
    spec: ModelSpec,
    params: ParamStore,
    manifest: D.SampleManifest,
    split: str,
    batch_size: int,
    mean: float = 0.5,
    std: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode (resize-only) predictions and targets over a split."""
    preds, targets = [], []
    for images, ages in D.batch_iter(
        manifest, split, batch_size, shuffle_seed=0, train_mode=False,
        mean=mean, std=std, size=spec.input_size,
    ):
        out = model_forward(images, spec, params)
        preds.append(out.data.reshape(-1))
        targets.append(ages.data)
    return np.concatenate(preds), np.concatenate(targets)


def _eval_loss(preds: np.ndarray, targets: np.ndarray, loss: LossSpec) -> float:
    return standard_loss(Tensor(preds.astype(np.float32)), Tensor(targets.astype(np.float32)), loss).item()


def run_training(cfg: TrainConfig, out_dir: str, single_thread: bool = False, quiet: bool = False) -> TrainResult:
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    manifest = prepare_manifest(cfg)
    n_train = len(manifest.of_split("train"))
    if n_train == 0:
        raise ConfigError("training split is empty")
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    schedule = resolve_schedule(cfg.schedule, steps_per_epoch, cfg.max_epochs)
    loss_spec = resolve_loss(cfg, manifest)
    aug = resolve_augmentation(cfg, manifest)

    params = init_params(cfg.model, cfg.seed)
    if cfg.pretrain_checkpoint:
        params = load_into(cfg.pretrain_checkpoint, cfg.model).params

    optim = OptimState(weight_decay=cfg.weight_decay, decay_exclude=default_decay_exclude(params))
    stopper = EarlyStopState(patience=cfg.patience)
    ckpt_path = os.path.join(out_dir, "best.ckpt")
    log_path = os.path.join(out_dir, "trainlog.csv")
    # the resolved split assignment, reusable by eval runs
    D.save_manifest(D.rebase_manifest(manifest, out_dir), os.path.join(out_dir, "splits.csv"))

    rows: list[EpochRow] = []
    val_history: list[float] = []
    best_val_mae = math.inf
    best_epoch = 0
    global_step = 0
    norm = dict(mean=cfg.normalize_mean, std=cfg.normalize_std)

    for epoch in range(1, cfg.max_epochs + 1):
        t_start = time.perf_counter()
        loss_sum = 0.0
        sample_count = 0
        lr = schedule.base_lr
        for images, ages in D.batch_iter(
            manifest, "train", cfg.batch_size, shuffle_seed=cfg.seed, epoch=epoch,
            aug=aug, train_mode=True, size=cfg.model.input_size, **norm,
        ):
            with tape() as graph:
                out = model_forward(images, cfg.model, params)
                pred = reshape(out, (out.shape[0],))
                loss = standard_loss(pred, ages, loss_spec)
                backward(loss, graph)
            lr = lr_at(schedule, global_step, val_history if schedule.kind == "reduce_on_plateau" else None)
            adamw_step(params, params.gradients(), optim, lr)
            params.zero_grad()
            loss_sum += loss.item() * images.shape[0]
            sample_count += images.shape[0]
            global_step += 1

        preds, targets = evaluate_split(
            cfg.model, params, manifest, "val", cfg.batch_size, **norm
        )
        val_mae = mae_metric(preds, targets)
        val_loss = _eval_loss(preds, targets, loss_spec)
        val_history.append(val_mae)
        seconds = 0.0 if single_thread else time.perf_counter() - t_start
        rows.append(EpochRow(epoch, loss_sum / sample_count, val_loss, val_mae, lr, seconds))
        if not quiet:
            print(f"epoch {epoch}: train_loss={rows[-1].train_loss:.4f} val_mae={val_mae:.4f} lr={lr:.3g}")

        if val_mae < best_val_mae:
            best_val_mae = val_mae
            best_epoch = epoch
            save_checkpoint(ckpt_path, cfg.model, params, best_val_mae=val_mae)
        _, stop = early_stop_update(stopper, val_mae)
        if stop:
            break

    write_trainlog(log_path, rows)
    return TrainResult(best_val_mae, best_epoch, rows, ckpt_path, log_path, schedule, steps_per_epoch)


def write_trainlog(path: str, rows: list[EpochRow]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAINLOG_HEADER + "\n")
        for row in rows:
            fh.write(row.format() + "\n")
    os.replace(tmp, path)
