"""Box regression + per-modality multi-label classification objective."""
from __future__ import annotations

import dataclasses

import torch
import torch.nn.functional as F

NEG_POS_RATIO = 3


@dataclasses.dataclass
class LossBreakdown:
    l_bbox: torch.Tensor
    l_multilabel: torch.Tensor
    lam: float
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "l_bbox": float(self.l_bbox.detach()),
            "l_multilabel": float(self.l_multilabel.detach()),
            "lambda": float(self.lam),
            "total": float(self.total.detach()),
        }


def bbox_loss(pred: torch.Tensor, target: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Smooth-L1 summed over coordinates and positive anchors, divided by the positive count."""
    pos = positive.bool()
    n_pos = int(pos.sum())
    if n_pos == 0:
        return pred.sum() * 0.0
    return F.smooth_l1_loss(pred[pos], target[pos].to(pred.dtype), reduction="sum", beta=1.0) / n_pos


def multilabel_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    positive: torch.Tensor,
    negative_pool: torch.Tensor,
    neg_ratio: int = NEG_POS_RATIO,
) -> torch.Tensor:
    """Binary cross-entropy per modality with hard-negative mining.

    ``logits``/``targets`` are ``(B, A, 2)``; targets of -1 are ignored.
    ``positive``/``negative_pool`` are ``(B, A)`` masks. Each image keeps its
    ``neg_ratio * n_pos`` highest-loss negatives; the sum is divided by the
    total positive count.
    """
    if logits.dim() == 2:
        logits, targets = logits[None], targets[None]
        positive, negative_pool = positive[None], negative_pool[None]
    targets = targets.to(logits.dtype)
    valid = targets >= 0
    bce = F.binary_cross_entropy_with_logits(logits, targets.clamp(min=0), reduction="none")
    per_anchor = (bce * valid).sum(dim=-1)
    pos = positive.bool()
    pool = negative_pool.bool() & ~pos
    n_pos = pos.sum(dim=1)

    total = per_anchor[pos].sum()
    ranked = per_anchor.detach().masked_fill(~pool, -1.0)
    for i in range(per_anchor.shape[0]):
        k = int(min(neg_ratio * int(n_pos[i]), int(pool[i].sum())))
        if k > 0:
            idx = torch.topk(ranked[i], k).indices
            total = total + per_anchor[i, idx].sum()
    return total / max(int(n_pos.sum()), 1)


def total_loss(l_bbox, l_multilabel, lam: float = 1.0) -> LossBreakdown:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return LossBreakdown(l_bbox, l_multilabel, lam, l_bbox + lam * l_multilabel)


def detection_loss(loc, logits, loc_t, cls_t, labels, lam: float = 1.0) -> LossBreakdown:
    """Full objective from head outputs and ``assign_targets`` results (batched)."""
    positive = labels == 1
    negative = labels == 0
    return total_loss(
        bbox_loss(loc, loc_t, positive),
        multilabel_loss(logits, cls_t, positive, negative),
        lam,
    )
