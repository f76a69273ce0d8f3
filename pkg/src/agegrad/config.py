"""Flat key=value configuration with AGEGRAD_* environment overrides.

Config files are UTF-8 lines of ``dotted.key=value``; blank lines and
``#`` comments are ignored. Every known key can also be overridden by an
environment variable named ``AGEGRAD_`` + the key upper-cased with dots
replaced by underscores (AGEGRAD_MODEL_HEAD_LAYERS=2 sets
model.head_layers). Grid keys for ablation sweeps use ``grid.<key>`` with
``|``-separated values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from .data import AugmentationSpec
from .errors import ConfigError
from .losses import LossSpec
from .model import ModelSpec
from .optim import ScheduleSpec

ENV_PREFIX = "AGEGRAD_"
AUTO = -1  # sentinel for schedule steps resolved from the data size


@dataclass
class TrainConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(warmup_steps=AUTO, total_steps=AUTO))
    aug: AugmentationSpec = field(default_factory=AugmentationSpec)
    aug_enabled: bool = True
    erase_fill: str = "auto"
    loss_weights: str = "auto"
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    weight_decay: float = 0.05
    pretrain_checkpoint: str = ""
    manifest: str = ""
    ratios: tuple = (0.8, 0.1, 0.1)
    normalize_mean: float = 0.5
    normalize_std: float = 0.5

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"train.max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")
        if self.weight_decay < 0:
            raise ConfigError(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        self.model.validate()
        self.loss.validate()


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _parse_float_list(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _parse_manual(text: str) -> tuple:
    table = []
    if text.strip():
        for item in text.split(","):
            step_text, lr_text = item.split(":")
            table.append((int(step_text), float(lr_text)))
    return tuple(table)


def _set(section: str, name: str, parser: Callable):
    def apply(cfg: TrainConfig, text: str) -> None:
        target = getattr(cfg, section) if section else cfg
        setattr(target, name, parser(text))

    return apply


KEYS: dict[str, Callable] = {
    "model.variant": _set("model", "variant", str),
    "model.input_size": _set("model", "input_size", int),
    "model.stage_depths": _set("model", "stage_depths", _parse_int_list),
    "model.stage_dims": _set("model", "stage_dims", _parse_int_list),
    "model.encoder_blocks": _set("model", "encoder_blocks", int),
    "model.token_dim": _set("model", "token_dim", int),
    "model.token_count": _set("model", "token_count", int),
    "model.num_heads": _set("model", "num_heads", int),
    "model.head_layers": _set("model", "head_layers", int),
    "model.head_hidden": _set("model", "head_hidden", int),
    "model.bridge_mode": _set("model", "bridge_mode", str),
    "model.use_layer_scale": _set("model", "use_layer_scale", _parse_bool),
    "model.positional_embedding": _set("model", "positional_embedding", _parse_bool),
    "loss.kind": _set("loss", "kind", str),
    "loss.sigma": _set("loss", "sigma", float),
    "loss.delta": _set("loss", "delta", float),
    "loss.weights": _set(None, "loss_weights", str),
    "schedule.kind": _set("schedule", "kind", str),
    "schedule.base_lr": _set("schedule", "base_lr", float),
    "schedule.min_lr": _set("schedule", "min_lr", float),
    "schedule.warmup_steps": _set("schedule", "warmup_steps", int),
    "schedule.total_steps": _set("schedule", "total_steps", int),
    "schedule.plateau_factor": _set("schedule", "plateau_factor", float),
    "schedule.plateau_patience": _set("schedule", "plateau_patience", int),
    "schedule.plateau_threshold": _set("schedule", "plateau_threshold", float),
    "schedule.manual": _set("schedule", "manual", _parse_manual),
    "aug.enabled": _set(None, "aug_enabled", _parse_bool),
    "aug.crop_scale": _set("aug", "crop_scale", _parse_float_list),
    "aug.flip_p": _set("aug", "flip_p", float),
    "aug.jitter_brightness": _set("aug", "jitter_brightness", float),
    "aug.jitter_contrast": _set("aug", "jitter_contrast", float),
    "aug.rotation_degrees": _set("aug", "rotation_degrees", float),
    "aug.blur_p": _set("aug", "blur_p", float),
    "aug.blur_sigma": _set("aug", "blur_sigma", _parse_float_list),
    "aug.erase_p": _set("aug", "erase_p", float),
    "aug.erase_area": _set("aug", "erase_area", _parse_float_list),
    "aug.erase_fill": _set(None, "erase_fill", str),
    "train.batch_size": _set(None, "batch_size", int),
    "train.max_epochs": _set(None, "max_epochs", int),
    "train.patience": _set(None, "patience", int),
    "train.seed": _set(None, "seed", int),
    "train.weight_decay": _set(None, "weight_decay", float),
    "train.pretrain_checkpoint": _set(None, "pretrain_checkpoint", str),
    "data.manifest": _set(None, "manifest", str),
    "data.ratios": _set(None, "ratios", _parse_float_list),
    "data.normalize_mean": _set(None, "normalize_mean", float),
    "data.normalize_std": _set(None, "normalize_std", float),
}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def parse_config_lines(lines, source: str = "<config>") -> tuple[dict[str, str], dict[str, str]]:
    """Split raw lines into plain assignments and grid.* assignments."""
    values: dict[str, str] = {}
    grid: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("grid."):
            inner = key[len("grid.") :]
            if inner not in KEYS:
                raise ConfigError(f"{source} line {lineno}: unknown grid key {inner!r}")
            grid[inner] = value
        elif key in KEYS:
            values[key] = value
        else:
            raise ConfigError(f"{source} line {lineno}: unknown config key {key!r}")
    return values, grid


def apply_values(cfg: TrainConfig, values: dict[str, str]) -> TrainConfig:
    for key, text in values.items():
        try:
            KEYS[key](cfg, text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config key {key}: cannot parse {text!r} ({exc})") from None
    return cfg


def env_overrides() -> dict[str, str]:
    found = {}
    for key in KEYS:
        value = os.environ.get(env_name(key))
        if value is not None:
            found[key] = value
    return found


def load_config(path: Optional[str], overrides: Optional[dict[str, str]] = None) -> tuple[TrainConfig, dict[str, str]]:
    """Build a TrainConfig from an optional file, the environment, and overrides.

    Precedence: defaults < file < environment < explicit overrides.
    Returns the config plus any grid.* assignments found in the file.
    """
    cfg = TrainConfig()
    grid: dict[str, str] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values, grid = parse_config_lines(fh, source=path)
        apply_values(cfg, values)
    apply_values(cfg, env_overrides())
    if overrides:
        apply_values(cfg, overrides)
    cfg.validate()
    return cfg, grid
