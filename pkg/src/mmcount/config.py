"""RunConfig: JSON config file with per-subcommand sections; unknown keys are rejected."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class SynthSection:
    n_images: int = 40
    height: int = 128
    width: int = 160
    heads_min: int = 5
    heads_max: int = 30
    head_radius: int = 3
    dark_fraction: float = 0.3
    sigma: float = 3.0
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    out_dir: Optional[str] = None


@dataclass
class GanSection:
    manifest: Optional[str] = None
    out: Optional[str] = None
    epochs: int = 50
    batch_size: int = 4
    lr: float = 1e-3
    lambda_l1: float = 100.0
    levels: int = 4
    base_filters: int = 32
    skip_connections: bool = True
    disc_layers: int = 3
    disc_base_filters: int = 32


@dataclass
class TranslateSection:
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    out_dir: Optional[str] = None


@dataclass
class CountSection:
    manifest: Optional[str] = None
    out: Optional[str] = None
    input_mode: str = "rgb+tir"
    tir_source: str = "real"
    epochs_max: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    early_stop_patience: int = 10
    val_split: str = "val"


@dataclass
class EvalSection:
    manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    out_dir: Optional[str] = None
    split: str = "test"
    levels: list = field(default_factory=lambda: [0, 1, 2])
    tir_source: Optional[str] = None
    model_name: str = "MMCount"
    n_maps: int = 4


@dataclass
class ReportSection:
    out_dir: Optional[str] = None


SECTIONS = {
    "synth": SynthSection,
    "train_gan": GanSection,
    "translate": TranslateSection,
    "train_count": CountSection,
    "eval": EvalSection,
    "report": ReportSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    synth: SynthSection = field(default_factory=SynthSection)
    train_gan: GanSection = field(default_factory=GanSection)
    translate: TranslateSection = field(default_factory=TranslateSection)
    train_count: CountSection = field(default_factory=CountSection)
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls(seed=default_seed())
        for key, value in data.items():
            if key in ("seed", "deterministic"):
                setattr(cfg, key, value)
            elif key in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                section = getattr(cfg, key)
                known = {f.name for f in fields(section)}
                for k, v in value.items():
                    if k not in known:
                        raise ConfigError(f"unknown config key {key}.{k}")
                    setattr(section, k, v)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(cfg.seed, int) or cfg.seed < 0:
            raise ConfigError(f"seed must be an unsigned integer, got {cfg.seed!r}")
        return cfg

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls(seed=default_seed())
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def default_seed() -> int:
    raw = os.environ.get("QMM_SEED")
    if raw is None:
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"QMM_SEED must be an unsigned integer, got {raw!r}") from None
    if seed < 0:
        raise ConfigError(f"QMM_SEED must be an unsigned integer, got {raw!r}")
    return seed
