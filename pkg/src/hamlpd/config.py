"""Experiment configuration: one JSON file with ``synth``, ``model`` and ``train`` sections."""
from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

from .augmentation import BaselineAugment, MaskingPolicy
from .data import SynthConfig
from .model import ModelConfig
from .trainer import TrainConfig

SEED_ENV = "HAMLPD_SEED"
SECTIONS = ("synth", "model", "train")


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "model": self.model.to_dict(),
            "train": json.loads(json.dumps(self.train.to_dict())),
        }


def _train_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if d.get("masking") is not None:
        d["masking"] = MaskingPolicy(**d["masking"])
    if d.get("baseline_aug") is not None:
        d["baseline_aug"] = BaselineAugment(**d["baseline_aug"])
    return TrainConfig(**d)


def from_dict(d: dict) -> ExperimentConfig:
    unknown = set(d) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(
            synth=SynthConfig.from_dict(d.get("synth", {})),
            model=ModelConfig.from_dict(d.get("model", {})),
            train=_train_from_dict(d.get("train", {})),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return apply_seed_override(cfg)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return from_dict(d)


def apply_seed_override(cfg: ExperimentConfig, env=None) -> ExperimentConfig:
    """``HAMLPD_SEED`` replaces both the data and the training seed."""
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    cfg.synth.seed = seed
    cfg.train.seed = seed
    return cfg
