"""SSD-style detection head: anchors, box coding, matching, prediction and NMS."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .structures import Box, Detection, GroundTruth

PED_RATIO = 1.0 / 0.41  # h / w
VARIANCES = (0.1, 0.2)


@dataclasses.dataclass
class AnchorSpec:
    """Per-level anchor scales (sqrt of area, pixels) and aspect ratios (h / w)."""

    scales: list[list[float]]
    ratios: list[list[float]]

    def __post_init__(self):
        if len(self.scales) != len(self.ratios):
            raise ValueError("need scales and ratios for every level")
        prev = 0.0
        for s in self.scales:
            if not s or min(s) <= 0:
                raise ValueError("anchor scales must be positive")
            if min(s) < prev:
                raise ValueError("anchor scales must increase with pyramid level")
            prev = min(s)
        if any(not r or min(r) <= 0 for r in self.ratios):
            raise ValueError("aspect ratios must be positive")

    @classmethod
    def default(cls, strides, multipliers=(3.0, 4.0, 5.0), ratios=(PED_RATIO,)) -> "AnchorSpec":
        return cls([[s * m for m in multipliers] for s in strides], [list(ratios) for _ in strides])

    @property
    def per_cell(self) -> list[int]:
        return [len(s) * len(r) for s, r in zip(self.scales, self.ratios)]

    def to_dict(self):
        return {"scales": self.scales, "ratios": self.ratios}


def generate_anchors(pyramid_shapes, spec: AnchorSpec, image_size, clip: bool = True) -> np.ndarray:
    """``(A, 4)`` corner boxes ordered by level, row, column, scale, ratio."""
    img_h, img_w = image_size
    if len(pyramid_shapes) != len(spec.scales):
        raise ValueError(f"{len(pyramid_shapes)} pyramid levels but anchors for {len(spec.scales)}")
    out = []
    for (fh, fw), scales, ratios in zip(pyramid_shapes, spec.scales, spec.ratios):
        sy, sx = img_h / fh, img_w / fw
        cy, cx = np.meshgrid((np.arange(fh) + 0.5) * sy, (np.arange(fw) + 0.5) * sx, indexing="ij")
        sizes = np.array([(s / math.sqrt(r), s * math.sqrt(r)) for s in scales for r in ratios])
        aw = sizes[None, None, :, 0]
        ah = sizes[None, None, :, 1]
        cx, cy = cx[..., None], cy[..., None]
        boxes = np.stack(np.broadcast_arrays(cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2), axis=-1)
        out.append(boxes.reshape(-1, 4))
    anchors = np.concatenate(out, axis=0) if out else np.zeros((0, 4))
    if clip:
        anchors = clip_boxes(anchors, image_size)
    return anchors


def clip_boxes(boxes: np.ndarray, image_size) -> np.ndarray:
    h, w = image_size
    b = np.array(boxes, dtype=np.float64, copy=True)
    b[:, [0, 2]] = b[:, [0, 2]].clip(0, w)
    b[:, [1, 3]] = b[:, [1, 3]].clip(0, h)
    return b


def iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clip(min=0)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def encode_boxes(gt: np.ndarray, anchors: np.ndarray, variances=VARIANCES) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gw, gh = gt[:, 2] - gt[:, 0], gt[:, 3] - gt[:, 1]
    aw, ah = anchors[:, 2] - anchors[:, 0], anchors[:, 3] - anchors[:, 1]
    if (gw <= 0).any() or (gh <= 0).any() or (aw <= 0).any() or (ah <= 0).any():
        raise ValueError("boxes must have positive width and height")
    return np.stack(
        [
            ((gt[:, 0] + gt[:, 2]) - (anchors[:, 0] + anchors[:, 2])) / 2 / aw / variances[0],
            ((gt[:, 1] + gt[:, 3]) - (anchors[:, 1] + anchors[:, 3])) / 2 / ah / variances[0],
            np.log(gw / aw) / variances[1],
            np.log(gh / ah) / variances[1],
        ],
        axis=1,
    )


def decode_boxes(offsets: np.ndarray, anchors: np.ndarray, variances=VARIANCES, image_size=None) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    aw, ah = anchors[:, 2] - anchors[:, 0], anchors[:, 3] - anchors[:, 1]
    if (aw <= 0).any() or (ah <= 0).any():
        raise ValueError("anchors must have positive width and height")
    cx = (anchors[:, 0] + anchors[:, 2]) / 2 + offsets[:, 0] * variances[0] * aw
    cy = (anchors[:, 1] + anchors[:, 3]) / 2 + offsets[:, 1] * variances[0] * ah
    # cap log-sizes so an untrained head cannot overflow exp
    w = aw * np.exp(np.minimum(offsets[:, 2] * variances[1], 10.0))
    h = ah * np.exp(np.minimum(offsets[:, 3] * variances[1], 10.0))
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return boxes if image_size is None else clip_boxes(boxes, image_size)


def encode_box(gt, anchor, variances=VARIANCES) -> np.ndarray:
    return encode_boxes(np.asarray(gt), np.asarray(anchor), variances)[0]


def decode_box(offsets, anchor, variances=VARIANCES, image_size=None) -> Box:
    return Box(*map(float, decode_boxes(np.asarray(offsets), np.asarray(anchor), variances, image_size)[0]))


@dataclasses.dataclass
class Assignment:
    """Per-anchor match: ``labels`` is 1 positive, 0 negative, -1 excluded (ignore region)."""

    labels: np.ndarray
    matched_gt: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.labels == 1

    @property
    def negative(self) -> np.ndarray:
        return self.labels == 0


def match_anchors(anchors: np.ndarray, gts: list[GroundTruth], pos_iou: float = 0.5) -> Assignment:
    """Threshold matching plus a forced best anchor for every non-ignored ground truth."""
    n = len(anchors)
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    if not gts or n == 0:
        return Assignment(labels, matched)
    boxes = np.array([list(g.box) for g in gts])
    ignore = np.array([g.is_ignore for g in gts])
    ious = iou_matrix(anchors, boxes)

    keep = np.flatnonzero(~ignore)
    if keep.size:
        sub = ious[:, keep]
        best = sub.argmax(axis=1)
        best_iou = sub[np.arange(n), best]
        pos = best_iou >= pos_iou
        labels[pos] = 1
        matched[pos] = keep[best[pos]]
        # forced matches; later ground truths win ties on a shared anchor
        for j, g in enumerate(keep):
            a = int(sub[:, j].argmax())
            labels[a] = 1
            matched[a] = g
    if ignore.any():
        near_ignore = ious[:, ignore].max(axis=1) >= pos_iou
        excl = near_ignore & (labels != 1)
        labels[excl] = -1
        matched[excl] = np.flatnonzero(ignore)[ious[:, ignore].argmax(axis=1)][excl]
    return Assignment(labels, matched)


def _centres_in(mask: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    cx = np.clip(((anchors[:, 0] + anchors[:, 2]) / 2).astype(np.int64), 0, w - 1)
    cy = np.clip(((anchors[:, 1] + anchors[:, 3]) / 2).astype(np.int64), 0, h - 1)
    return mask[cy, cx] != 0


def assign_targets(anchors, gts, m_rgb=None, m_thermal=None, pos_iou=0.5, variances=VARIANCES):
    """Training targets for one image.

    Returns ``(loc_targets (A, 4), cls_targets (A, 2), labels (A,))``. Class
    targets are 1/0 per modality from the visibility flags and -1 (ignored)
    where the anchor centre falls in that modality's blackout or the anchor is
    excluded by an ignore region.
    """
    asg = match_anchors(anchors, gts, pos_iou)
    n = len(anchors)
    loc = np.zeros((n, 4), dtype=np.float64)
    cls = np.zeros((n, 2), dtype=np.float64)
    pos = np.flatnonzero(asg.positive)
    if pos.size:
        boxes = np.array([list(gts[i].box) for i in asg.matched_gt[pos]])
        loc[pos] = encode_boxes(boxes, anchors[pos], variances)
        cls[pos, 0] = [gts[i].visible_rgb for i in asg.matched_gt[pos]]
        cls[pos, 1] = [gts[i].visible_thermal for i in asg.matched_gt[pos]]
    cls[asg.labels == -1] = -1
    for k, m in enumerate((m_rgb, m_thermal)):
        if m is not None:
            cls[~_centres_in(np.asarray(m), anchors), k] = -1
    return loc, cls, asg.labels


class DetectionHead(nn.Module):
    """Per-level 3x3 convolutions predicting box offsets and two presence logits per anchor."""

    def __init__(self, in_channels, anchors_per_cell, init_std=0.01):
        super().__init__()
        self.anchors_per_cell = list(anchors_per_cell)
        self.loc = nn.ModuleList(nn.Conv2d(c, a * 4, 3, padding=1) for c, a in zip(in_channels, anchors_per_cell))
        self.cls = nn.ModuleList(nn.Conv2d(c, a * 2, 3, padding=1) for c, a in zip(in_channels, anchors_per_cell))
        for conv in list(self.loc) + list(self.cls):
            nn.init.normal_(conv.weight, std=init_std)
            nn.init.zeros_(conv.bias)

    def forward(self, features):
        return predict(features, self)


def _flatten(x: torch.Tensor, a: int, k: int) -> torch.Tensor:
    b, _, h, w = x.shape
    return x.view(b, a, k, h, w).permute(0, 3, 4, 1, 2).reshape(b, h * w * a, k)


def predict(features, head: DetectionHead):
    """Return ``(loc (B, A, 4), logits (B, A, 2))``; logits are (rgb, thermal) pre-sigmoid."""
    if len(features) != len(head.loc):
        raise ValueError(f"head has {len(head.loc)} levels but got {len(features)} feature maps")
    locs, logits = [], []
    for f, lconv, cconv, a in zip(features, head.loc, head.cls, head.anchors_per_cell):
        if f.shape[1] != lconv.in_channels:
            raise ValueError(f"level expects {lconv.in_channels} channels, got {f.shape[1]}")
        locs.append(_flatten(lconv(f), a, 4))
        logits.append(_flatten(cconv(f), a, 2))
    return torch.cat(locs, dim=1), torch.cat(logits, dim=1)


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float = 0.45, top_k: int | None = 200) -> list[int]:
    """Greedy NMS; ties in score keep input order."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    boxes = np.asarray(boxes, dtype=np.float64)
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    ious = None
    for rank, i in enumerate(order):
        if suppressed[rank]:
            continue
        keep.append(int(i))
        if top_k is not None and len(keep) >= top_k:
            break
        rest = order[rank + 1:]
        if rest.size:
            ious = iou_matrix(boxes[i:i + 1], boxes[rest])[0]
            suppressed[rank + 1:] |= ious >= iou_thresh
    return keep


def nms(dets: list[Detection], iou_thresh: float = 0.45, top_k: int | None = 200) -> list[Detection]:
    if not dets:
        return []
    boxes = np.array([list(d.box) for d in dets])
    scores = np.array([d.confidence for d in dets])
    return [dets[i] for i in nms_indices(boxes, scores, iou_thresh, top_k)]


def postprocess(loc, logits, anchors, image_size, m_rgb=None, m_thermal=None,
                score_thresh: float = 0.01, iou_thresh: float = 0.45, top_k: int = 200,
                variances=VARIANCES) -> list[Detection]:
    """Decode one image's raw outputs into NMS-filtered detections.

    A modality's score is zeroed at anchors whose centre lies outside that
    modality's availability mask.
    """
    loc = np.asarray(loc, dtype=np.float64)
    scores = np.exp(-np.logaddexp(0.0, -np.asarray(logits, dtype=np.float64)))
    for k, m in enumerate((m_rgb, m_thermal)):
        if m is not None:
            scores[~_centres_in(np.asarray(m), anchors), k] = 0.0
    conf = scores.max(axis=1)
    cand = np.flatnonzero(conf >= score_thresh)
    if cand.size == 0:
        return []
    boxes = decode_boxes(loc[cand], anchors[cand], variances, image_size)
    ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    cand, boxes = cand[ok], boxes[ok]
    keep = nms_indices(boxes, conf[cand], iou_thresh, top_k)
    return [Detection(Box(*map(float, boxes[i])), float(scores[cand[i], 0]), float(scores[cand[i], 1])) for i in keep]


# --------------------------------------------------------------------------- JSON lines

def write_detections_jsonl(path, results: dict[str, list[Detection]]) -> None:
    """One ``{image_id, x, y, w, h, score}`` object per line."""
    with open(path, "w") as fh:
        for image_id, dets in results.items():
            for d in dets:
                x, y, w, h = d.box.to_xywh()
                fh.write(json.dumps({"image_id": image_id, "x": x, "y": y, "w": w, "h": h, "score": d.confidence}) + "\n")


def read_detections_jsonl(path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            box = Box.from_xywh(r["x"], r["y"], r["w"], r["h"])
            s = float(r["score"])
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"{path}:{n}: bad detection record ({e})") from None
        out.setdefault(str(r["image_id"]), []).append(Detection(box, s, s))
    return out
