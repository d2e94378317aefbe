"""Flat key=value run configuration.

One file drives model, loss, schedule, and trainer settings. Parsing is
total: every key is validated against the declared table, unknown keys are
rejected, and `config dump` emits a canonical rendering that re-parses to
the same values (fixed point).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .curriculum import StageSchedule
from .errors import ConfigError
from .losses import LossConfig
from .model import RdpNetConfig
from .trainer import AdamWConfig, TrainConfig

_BOOL_NAMES = {"true": True, "false": False}

# name -> (type, default)
KEYS: dict[str, tuple[type, Any]] = {
    # model
    "patch_size": (int, 4),
    "embed_dim": (int, 64),
    "depth": (int, 6),
    "out_ch": (int, 32),
    "dw_kernel": (int, 7),
    "in_channels": (int, 6),
    "num_classes": (int, 2),
    "dtype": (str, "float64"),
    # loss
    "alpha": (float, 1.0),
    "neighborhood": (int, 7),
    "focal_gamma": (float, 2.0),
    "dice_smooth": (float, 1.0),
    # trainer
    "lr0": (float, 1e-3),
    "decay": (float, 0.8),
    "decay_every": (int, 15),
    "batch_size": (int, 16),
    "epochs": (int, 200),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "weight_decay": (float, 0.01),
    "strategy": (str, "efficient"),
    "seed": (int, 0),
    "sample_fraction": (float, 0.75),
    # curriculum schedule
    "warmup_end": (int, 30),
    "medium_start": (int, 60),
    "hard_start": (int, 90),
    "cumulative": (bool, True),
    # paths
    "train_manifest": (str, ""),
    "val_manifest": (str, ""),
    "out_dir": (str, "runs/default"),
}


def _parse_value(key: str, raw: str):
    kind, _ = KEYS[key]
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL_NAMES:
            raise ConfigError(f"key {key!r}: expected true/false, got {raw!r}")
        return _BOOL_NAMES[raw.lower()]
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in KEYS.items()})

    def __getitem__(self, key: str):
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    def set(self, key: str, raw_or_value) -> None:
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(raw_or_value, str):
            self.values[key] = _parse_value(key, raw_or_value)
        else:
            kind, _ = KEYS[key]
            self.values[key] = kind(raw_or_value)

    def dump(self) -> str:
        lines = [f"{key} = {_format_value(self.values[key])}" for key in KEYS]
        return "\n".join(lines) + "\n"

    # -- typed views ---------------------------------------------------------

    def model_config(self) -> RdpNetConfig:
        cfg = RdpNetConfig(
            patch_size=self["patch_size"],
            embed_dim=self["embed_dim"],
            depth=self["depth"],
            out_ch=self["out_ch"],
            dw_kernel=self["dw_kernel"],
            in_channels=self["in_channels"],
            num_classes=self["num_classes"],
            dtype=self["dtype"],
        )
        cfg.validate()
        return cfg

    def loss_config(self) -> LossConfig:
        cfg = LossConfig(
            alpha=self["alpha"],
            neighborhood=self["neighborhood"],
            focal_gamma=self["focal_gamma"],
            dice_smooth=self["dice_smooth"],
        )
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        cfg = TrainConfig(
            lr0=self["lr0"],
            decay=self["decay"],
            decay_every=self["decay_every"],
            batch_size=self["batch_size"],
            epochs=self["epochs"],
            adamw=AdamWConfig(
                beta1=self["beta1"],
                beta2=self["beta2"],
                eps=self["adam_eps"],
                weight_decay=self["weight_decay"],
            ),
            strategy=self["strategy"],
            seed=self["seed"],
            sample_fraction=self["sample_fraction"],
        )
        cfg.validate()
        return cfg

    def schedule(self) -> StageSchedule:
        cfg = StageSchedule(
            warmup_end=self["warmup_end"],
            medium_start=self["medium_start"],
            hard_start=self["hard_start"],
            total_epochs=self["epochs"],
            cumulative=self["cumulative"],
        )
        cfg.validate()
        return cfg


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        cfg.set(key, raw)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
