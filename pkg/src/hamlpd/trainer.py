"""SGD training loop and scenario-by-split evaluation."""
from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import math
from pathlib import Path

import numpy as np
import torch

from . import augmentation
from .augmentation import BaselineAugment, MaskingPolicy, rng_for
from .blackout import ALL_SCENARIOS, Scenario, apply_scenario
from .detection import assign_targets
from .evaluation import SPLITS, evaluate_detections, metrics_records
from .losses import detection_loss
from .model import HAMLPD, ModelConfig, load_checkpoint, masks_to_tensor, pairs_to_tensors, save_checkpoint
from .structures import ScenePair

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_milestones: tuple[int, ...] = (20, 36)
    gamma: float = 0.1
    lam: float = 1.0
    seed: int = 0
    patience: int = 50
    val_fraction: float = 0.1
    val_every: int = 1
    masking: MaskingPolicy | None = dataclasses.field(default_factory=MaskingPolicy)
    baseline_aug: BaselineAugment | None = dataclasses.field(default_factory=BaselineAugment)
    min_height: float = 55.0
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if isinstance(self.masking, dict):
            self.masking = MaskingPolicy(**self.masking)
        if isinstance(self.baseline_aug, dict):
            self.baseline_aug = BaselineAugment(**self.baseline_aug)
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        for name in ("epochs", "batch_size", "lr", "gamma", "lam", "patience", "val_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight decay must be non-negative")
        if any(not 0 < m < self.epochs for m in self.lr_milestones):
            raise ValueError("learning-rate milestones must fall inside the epoch range")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during ``epoch`` (0-based) under the step schedule."""
    return cfg.lr * cfg.gamma ** sum(epoch >= m for m in cfg.lr_milestones)


@dataclasses.dataclass
class TrainResult:
    model: HAMLPD
    history: list[dict]
    best_epoch: int
    best_mr: float | None
    checkpoint: Path | None = None


def _batch_targets(model: HAMLPD, samples):
    locs, clss, labels = [], [], []
    for pair, m_rgb, m_th in samples:
        loc, cls, lab = assign_targets(model.anchors, pair.gts, m_rgb, m_th, model.cfg.pos_iou, model.cfg.variances)
        locs.append(loc)
        clss.append(cls)
        labels.append(lab)
    return (torch.from_numpy(np.stack(locs)).float(), torch.from_numpy(np.stack(clss)).float(),
            torch.from_numpy(np.stack(labels)))


def split_validation(pairs: list[ScenePair], fraction: float):
    n_val = int(round(len(pairs) * fraction))
    if n_val == 0:
        return list(pairs), []
    return list(pairs[:-n_val]), list(pairs[-n_val:])


def dual_mr(model: HAMLPD, pairs: list[ScenePair], min_height: float) -> float | None:
    dets = model.detect(pairs)
    res = evaluate_detections(
        {p.image_id: d for p, d in zip(pairs, dets)},
        {p.image_id: p.gts for p in pairs},
        {p.image_id: p.tag for p in pairs},
        min_height=min_height,
        splits=("all",),
    )["all"]
    return None if res is None else res["mr"]


def write_history(path, history: list[dict]) -> None:
    if not history:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(history[0]))
        w.writeheader()
        w.writerows(history)


def train(
    pairs: list[ScenePair],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir=None,
    val_pairs: list[ScenePair] | None = None,
) -> TrainResult:
    """Train a detector; keeps the weights with the best validation MR (DUAL, all images).

    Without ``val_pairs`` the last ``val_fraction`` of ``pairs`` is held out.
    """
    if not pairs:
        raise ValueError("training set is empty")
    if val_pairs is None:
        pairs, val_pairs = split_validation(pairs, cfg.val_fraction)
    torch.manual_seed(cfg.seed)
    model = HAMLPD(model_cfg)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=list(cfg.lr_milestones), gamma=cfg.gamma)

    history: list[dict] = []
    best_mr, best_epoch, best_state = math.inf, -1, None
    stale = 0
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng_for(cfg.seed, epoch).permutation(len(pairs))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            samples = [
                augmentation.augment_sample(pairs[i], rng_for(cfg.seed, epoch, int(i)), cfg.masking, cfg.baseline_aug)
                for i in idx
            ]
            loc_t, cls_t, labels = _batch_targets(model, samples)
            rgb, th = pairs_to_tensors([s_[0] for s_ in samples])
            m_rgb = masks_to_tensor([s_[1] for s_ in samples])
            m_th = masks_to_tensor([s_[2] for s_ in samples])
            loc, logits = model(rgb, th, m_rgb, m_th)
            losses = detection_loss(loc, logits, loc_t, cls_t, labels, cfg.lam)
            if not torch.isfinite(losses.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: {losses.as_floats()}"
                )
            opt.zero_grad()
            losses.total.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            history.append({"epoch": epoch, "step": step, "lr": opt.param_groups[0]["lr"], **losses.as_floats()})
            step += 1
        sched.step()

        last = epoch == cfg.epochs - 1
        if val_pairs and ((epoch + 1) % cfg.val_every == 0 or last):
            mr = dual_mr(model, val_pairs, cfg.min_height)
            log.info("epoch %d: val MR %s", epoch, mr)
            if mr is not None and mr < best_mr:
                best_mr, best_epoch, best_state = mr, epoch, copy.deepcopy(model.state_dict())
                stale = 0
            else:
                stale += cfg.val_every
            if stale >= cfg.patience:
                log.info("early stop at epoch %d", epoch)
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = epoch
    model.eval()

    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.ckpt"
        save_checkpoint(ckpt, model, {"best_epoch": best_epoch, "best_val_mr": None if best_state is None else best_mr,
                                      "train": _jsonable(cfg.to_dict())})
        write_history(out / "history.csv", history)
    return TrainResult(model, history, best_epoch, None if best_state is None else best_mr, ckpt)


def _jsonable(d):
    import json

    return json.loads(json.dumps(d, default=str))


@dataclasses.dataclass
class ScenarioTable:
    """MR (percent) per scenario and split, plus the full metric records."""

    mr: dict[str, dict[str, float | None]]
    records: list[dict]
    detections: dict[str, dict] = dataclasses.field(default_factory=dict)

    def cells(self) -> list[float | None]:
        return [v for row in self.mr.values() for v in row.values()]

    def format(self) -> str:
        head = f"{'scenario':<18}" + "".join(f"{'MR(' + s.title() + ')':>12}" for s in SPLITS)
        lines = [head]
        for sc, row in self.mr.items():
            lines.append(f"{sc:<18}" + "".join(
                f"{'-' if row.get(s) is None else format(row[s], '.2f'):>12}" for s in SPLITS))
        return "\n".join(lines)


def evaluate_scenarios(model, pairs: list[ScenePair], scenarios=ALL_SCENARIOS, min_height: float = 55.0,
                       keep_detections: bool = False) -> ScenarioTable:
    """Blackout each test pair per scenario, detect with the matching masks, score MR per split."""
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)
    gts = {p.image_id: p.gts for p in pairs}
    tags = {p.image_id: p.tag for p in pairs}
    table, records, kept = {}, [], {}
    for sc in scenarios:
        sc = Scenario.parse(sc)
        blacked = [apply_scenario(p, sc) for p in pairs]
        dets = model.detect([b[0] for b in blacked], [(b[1], b[2]) for b in blacked])
        by_image = {p.image_id: d for p, d in zip(pairs, dets)}
        res = evaluate_detections(by_image, gts, tags, min_height=min_height)
        table[sc.value] = {s: (None if v is None else v["mr"]) for s, v in res.items()}
        records.extend(metrics_records(sc.value, res))
        if keep_detections:
            kept[sc.value] = by_image
    return ScenarioTable(table, records, kept)
