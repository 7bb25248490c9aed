"""Ablation runs on synthetic data: full model vs. no-HA vs. no-HA-no-masking."""
from __future__ import annotations

import copy
import dataclasses
import logging
import time

import numpy as np
import torch

from .augmentation import MaskingPolicy
from .backbone import BackboneConfig, StageSpec
from .blackout import ALL_SCENARIOS, PARTIAL_SCENARIOS
from .config import ExperimentConfig
from .data import SynthConfig, generate_split
from .model import HAMLPD, ModelConfig
from .trainer import ScenarioTable, TrainConfig, evaluate_scenarios, train

log = logging.getLogger(__name__)

VARIANTS = ("ha", "aug", "base")
VARIANT_LABELS = {
    "ha": "HA + masking augmentation",
    "aug": "no HA, masking augmentation",
    "base": "no HA, no masking augmentation",
}


def toy_config() -> ExperimentConfig:
    """Desk-scale setting: 64x80 scenes, 8/16/32-stride pyramid, 40 epochs.

    The scenes carry few single-modality pedestrians and a light RGB texture so
    that both branches can learn from 450 training images.
    """
    synth = SynthConfig(height=64, width=80, ped_height=(14, 36), max_pedestrians=3,
                        thermal_only_fraction=0.01, rgb_only_fraction=0.01, night_thermal_only=0.05,
                        night_dim=0.6, rgb_texture=0.25, n_train=500, n_test=200, seed=1)
    model = ModelConfig(
        image_size=(64, 80),
        backbone=BackboneConfig(stages=[StageSpec(16, 4), StageSpec(32, 2), StageSpec(64, 2)]),
        anchor_multipliers=(2.5, 3.5, 4.5),
    )
    train_cfg = TrainConfig(epochs=40, batch_size=16, lr=1e-2, lr_milestones=(28,), min_height=8, val_every=5)
    return ExperimentConfig(synth, model, train_cfg)


def variant_configs(cfg: ExperimentConfig, variant: str) -> tuple[ModelConfig, TrainConfig]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    model = copy.deepcopy(cfg.model)
    tr = copy.deepcopy(cfg.train)
    model.backbone.use_ha = variant == "ha"
    if variant == "base":
        tr.masking = None
    elif tr.masking is None:
        tr.masking = MaskingPolicy()
    return model, tr


@dataclasses.dataclass
class Run:
    variant: str
    seed: int
    table: ScenarioTable
    seconds: float

    @property
    def partial_mr(self) -> float:
        return float(np.mean([self.table.mr[s.value]["all"] for s in PARTIAL_SCENARIOS]))


@dataclasses.dataclass
class AblationResult:
    runs: list[Run]
    untrained: dict[int, ScenarioTable]

    def by_variant(self, variant: str) -> list[Run]:
        return [r for r in self.runs if r.variant == variant]

    def mean_partial(self, variant: str) -> float:
        return float(np.mean([r.partial_mr for r in self.by_variant(variant)]))

    def mean_mr(self, variant: str, scenario: str, split: str = "all") -> float:
        return float(np.mean([r.table.mr[scenario][split] for r in self.by_variant(variant)]))

    def summary(self) -> str:
        lines = []
        for v in VARIANTS:
            runs = self.by_variant(v)
            if not runs:
                continue
            per_seed = ", ".join(f"{r.partial_mr:.2f}" for r in runs)
            lines.append(f"{VARIANT_LABELS[v]:<32} partial-overlap MR {self.mean_partial(v):6.2f}  (seeds: {per_seed})")
        return "\n".join(lines)


def run_ablation(cfg: ExperimentConfig, seeds=(0, 1, 2), variants=VARIANTS, scenarios=ALL_SCENARIOS) -> AblationResult:
    """Train every variant for every seed on one synthetic dataset and score all scenarios."""
    train_pairs = generate_split(cfg.synth, "train")
    test_pairs = generate_split(cfg.synth, "test")
    runs, untrained = [], {}
    min_h = cfg.train.min_height
    for seed in seeds:
        for v in variants:
            model_cfg, tr = variant_configs(cfg, v)
            tr.seed = seed
            t0 = time.perf_counter()
            res = train(train_pairs, model_cfg, tr)
            table = evaluate_scenarios(res.model, test_pairs, scenarios, min_height=min_h)
            runs.append(Run(v, seed, table, time.perf_counter() - t0))
            log.info("seed %d %s: partial MR %.2f", seed, v, runs[-1].partial_mr)
        torch.manual_seed(seed)
        fresh = HAMLPD(variant_configs(cfg, variants[0])[0])
        untrained[seed] = evaluate_scenarios(fresh, test_pairs, scenarios, min_height=min_h)
    return AblationResult(runs, untrained)
