"""Log-average miss rate over the FPPI range [1e-2, 1e0] at IoU 0.5."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .detection import iou_matrix
from .structures import Detection, GroundTruth

TP, FP, IGNORED = 1, 0, -1
REFERENCE_FPPI = np.logspace(-2.0, 0.0, 9)
SPLITS = ("all", "day", "night")


@dataclasses.dataclass
class ImageResult:
    scores: np.ndarray
    status: np.ndarray  # TP / FP / IGNORED per detection, in descending-score order
    gt_matched: np.ndarray  # per input gt; ignore gts are never "matched"
    n_gt: int  # non-ignored ground truths
    tag: str = "day"


@dataclasses.dataclass
class MRCurve:
    thresholds: np.ndarray
    fppi: np.ndarray
    miss_rate: np.ndarray
    n_gt: int

    def to_dict(self) -> dict:
        return {
            "thresholds": [None if not math.isfinite(t) else float(t) for t in self.thresholds],
            "fppi": [float(v) for v in self.fppi],
            "miss_rate": [float(v) for v in self.miss_rate],
            "n_gt": int(self.n_gt),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MRCurve":
        th = np.array([np.inf if t is None else t for t in d["thresholds"]], dtype=float)
        return cls(th, np.asarray(d["fppi"], float), np.asarray(d["miss_rate"], float), int(d["n_gt"]))


def reasonable(gts: list[GroundTruth], min_height: float = 55.0) -> list[GroundTruth]:
    """Mark ground truths shorter than ``min_height`` pixels as ignore regions."""
    return [
        g if g.is_ignore or g.box.height >= min_height else dataclasses.replace(g, is_ignore=True)
        for g in gts
    ]


def match_image(dets: list[Detection], gts: list[GroundTruth], iou_thresh: float = 0.5):
    """Greedy matching of ``dets`` (assumed sorted by confidence, descending).

    Each detection takes the highest-IoU unmatched non-ignored gt with IoU >=
    ``iou_thresh`` (TP); failing that, any ignore gt above the threshold makes
    it IGNORED; otherwise it is an FP. Returns ``(status, gt_matched)``.
    """
    status = np.full(len(dets), FP, dtype=np.int64)
    gt_matched = np.zeros(len(gts), dtype=bool)
    if not dets or not gts:
        return status, gt_matched
    ious = iou_matrix([list(d.box) for d in dets], [list(g.box) for g in gts])
    ignore = np.array([g.is_ignore for g in gts])
    for i in range(len(dets)):
        cand = np.where(~ignore & ~gt_matched & (ious[i] >= iou_thresh), ious[i], -1.0)
        j = int(cand.argmax())
        if cand[j] >= 0:
            status[i] = TP
            gt_matched[j] = True
        elif (ious[i][ignore] >= iou_thresh).any():
            status[i] = IGNORED
    return status, gt_matched


def evaluate_image(dets: list[Detection], gts: list[GroundTruth], iou_thresh=0.5, tag="day") -> ImageResult:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    dets = [dets[i] for i in order]
    status, matched = match_image(dets, gts, iou_thresh)
    return ImageResult(
        scores=np.array([d.confidence for d in dets], dtype=np.float64),
        status=status,
        gt_matched=matched,
        n_gt=sum(not g.is_ignore for g in gts),
        tag=tag,
    )


def miss_rate_curve(results: list[ImageResult], n_images: int | None = None) -> MRCurve:
    """Sweep the score threshold over every detection score (one point per distinct score).

    Detections matched to ignore regions count as neither TP nor FP but still
    contribute their score as a threshold.
    """
    n_images = len(results) if n_images is None else n_images
    if n_images < 1:
        raise ValueError("need at least one image")
    n_gt = sum(r.n_gt for r in results)
    if n_gt == 0:
        raise ValueError("miss rate is undefined without non-ignored ground truths")
    scores = np.concatenate([r.scores for r in results]) if results else np.zeros(0)
    status = np.concatenate([r.status for r in results]) if results else np.zeros(0, dtype=np.int64)
    # ignored detections add no TP/FP but still define a threshold on the sweep
    if scores.size == 0:
        return MRCurve(np.array([np.inf]), np.array([0.0]), np.array([1.0]), n_gt)
    order = np.argsort(-scores, kind="stable")
    scores, status = scores[order], status[order]
    tp = np.cumsum(status == TP)
    fp = np.cumsum(status == FP)
    # last index of each run of equal scores
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return MRCurve(scores[last], fp[last] / n_images, 1.0 - tp[last] / n_gt, n_gt)


def sample_curve(curve: MRCurve, refs=REFERENCE_FPPI) -> np.ndarray:
    """Miss rate at each reference FPPI: the point with the largest fppi <= ref,
    or the curve's highest miss rate when no point qualifies."""
    out = np.empty(len(refs))
    for k, ref in enumerate(refs):
        idx = np.flatnonzero(curve.fppi <= ref)
        out[k] = curve.miss_rate[idx[-1]] if idx.size else curve.miss_rate.max()
    return out


def log_average_miss_rate(curve: MRCurve, refs=REFERENCE_FPPI) -> float:
    """Geometric mean of the sampled miss rates, in percent.

    Zero miss rates are clamped to ``1 / (10 * n_gt)`` before the log.
    """
    mr = sample_curve(curve, refs)
    floor = 1.0 / (10.0 * max(curve.n_gt, 1))
    return float(100.0 * np.exp(np.mean(np.log(np.maximum(mr, floor)))))


def evaluate_detections(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[GroundTruth]],
    tags: dict[str, str] | None = None,
    min_height: float = 55.0,
    iou_thresh: float = 0.5,
    splits=SPLITS,
) -> dict[str, dict | None]:
    """MR and curve per split (``all``/``day``/``night``); ``None`` for splits without ground truth."""
    tags = tags or {}
    results = {
        iid: evaluate_image(dets_by_image.get(iid, []), reasonable(gts, min_height), iou_thresh, tags.get(iid, "day"))
        for iid, gts in gts_by_image.items()
    }
    out = {}
    for split in splits:
        rs = [r for r in results.values() if split == "all" or r.tag == split]
        if not rs or sum(r.n_gt for r in rs) == 0:
            out[split] = None
            continue
        curve = miss_rate_curve(rs)
        out[split] = {"mr": log_average_miss_rate(curve), "curve": curve}
    return out


def metrics_records(scenario: str, per_split: dict) -> list[dict]:
    """Report records ``{scenario, split, mr, curve}``."""
    return [
        {
            "scenario": scenario,
            "split": split,
            "mr": None if v is None else v["mr"],
            "curve": None if v is None else v["curve"].to_dict(),
        }
        for split, v in per_split.items()
    ]


def write_metrics(path, records: list[dict]) -> None:
    Path(path).write_text(json.dumps({"records": records}, indent=1))


def read_metrics(path) -> list[dict]:
    d = json.loads(Path(path).read_text())
    return d["records"] if isinstance(d, dict) else d
