"""Full detector (backbone + head), tensor conversion, and the checkpoint archive."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig
from .detection import VARIANCES, AnchorSpec, DetectionHead, generate_anchors, postprocess
from .structures import Detection, ScenePair

CHECKPOINT_FORMAT = "hamlpd-checkpoint"
HEADER_KEY = "__header__"


@dataclasses.dataclass
class ModelConfig:
    image_size: tuple[int, int] = (256, 320)
    backbone: BackboneConfig = dataclasses.field(default_factory=BackboneConfig)
    anchor_multipliers: tuple[float, ...] = (3.0, 4.0, 5.0)
    anchor_ratios: tuple[float, ...] = (1.0 / 0.41,)
    variances: tuple[float, float] = VARIANCES
    pos_iou: float = 0.5
    score_thresh: float = 0.01
    nms_iou: float = 0.45
    top_k: int = 200
    mask_scores: bool = True

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.image_size = tuple(int(v) for v in self.image_size)
        self.anchor_multipliers = tuple(float(v) for v in self.anchor_multipliers)
        self.anchor_ratios = tuple(float(v) for v in self.anchor_ratios)
        self.variances = tuple(float(v) for v in self.variances)
        self.backbone.check_input(*self.image_size)

    @property
    def anchor_spec(self) -> AnchorSpec:
        return AnchorSpec.default(self.backbone.level_strides, self.anchor_multipliers, self.anchor_ratios)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "backbone" in d:
            d["backbone"] = BackboneConfig(**d["backbone"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def pairs_to_tensors(pairs: list[ScenePair], dtype=torch.float32):
    """Stack uint8 images into ``(B, 3, H, W)`` and ``(B, 1, H, W)`` tensors scaled to [0, 1]."""
    rgb = np.stack([p.rgb for p in pairs]).transpose(0, 3, 1, 2)
    th = np.stack([p.thermal for p in pairs]).transpose(0, 3, 1, 2)
    return (torch.from_numpy(np.ascontiguousarray(rgb)).to(dtype) / 255.0,
            torch.from_numpy(np.ascontiguousarray(th)).to(dtype) / 255.0)


def masks_to_tensor(masks, dtype=torch.float32):
    return torch.from_numpy(np.stack([np.asarray(m, dtype=np.float32) for m in masks])).to(dtype)


class HAMLPD(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone
        self.backbone = Backbone(bb)
        spec = cfg.anchor_spec
        self.head = DetectionHead(bb.fusion_channels, spec.per_cell, bb.init_std)
        self.anchors = generate_anchors(bb.level_shapes(*cfg.image_size), spec, cfg.image_size)

    def forward(self, rgb, thermal, m_rgb=None, m_thermal=None):
        return self.head(self.backbone(rgb, thermal, m_rgb, m_thermal))

    @torch.no_grad()
    def detect(self, pairs: list[ScenePair], masks=None, batch_size: int = 16) -> list[list[Detection]]:
        """Inference on co-registered pairs; ``masks`` is a list of ``(m_rgb, m_thermal)`` or None."""
        was_training = self.training
        self.eval()
        out = []
        dtype = next(self.parameters()).dtype
        try:
            for s in range(0, len(pairs), batch_size):
                chunk = pairs[s:s + batch_size]
                rgb, th = pairs_to_tensors(chunk, dtype)
                if masks is None:
                    mr = mt = None
                    mlist = [(None, None)] * len(chunk)
                else:
                    mlist = masks[s:s + batch_size]
                    mr = masks_to_tensor([m[0] for m in mlist], dtype)
                    mt = masks_to_tensor([m[1] for m in mlist], dtype)
                loc, logits = self(rgb, th, mr, mt)
                for i, (a, b) in enumerate(mlist):
                    use = self.cfg.mask_scores
                    out.append(postprocess(
                        loc[i].numpy(), logits[i].numpy(), self.anchors, self.cfg.image_size,
                        a if use else None, b if use else None,
                        self.cfg.score_thresh, self.cfg.nms_iou, self.cfg.top_k, self.cfg.variances,
                    ))
        finally:
            self.train(was_training)
        return out


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: HAMLPD, extra: dict | None = None) -> None:
    """Write parameters and buffers as little-endian float32 arrays plus a JSON header."""
    arrays = {}
    shapes = {}
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy().astype("<f4")
        arrays[name] = a
        shapes[name] = list(a.shape)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.digest(),
        "shapes": shapes,
        "extra": extra or {},
    }
    arrays[HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_header(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        if HEADER_KEY not in z:
            raise CheckpointError(f"{path} has no header")
        return json.loads(bytes(z[HEADER_KEY]).decode())


def load_checkpoint(path, dtype=torch.float32) -> HAMLPD:
    header = read_checkpoint_header(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    cfg = ModelConfig.from_dict(header["config"])
    if cfg.digest() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    model = HAMLPD(cfg)
    state = model.state_dict()
    with np.load(path) as z:
        for name, t in state.items():
            if name not in z:
                raise CheckpointError(f"{path}: missing tensor {name}")
            a = z[name]
            if list(a.shape) != list(t.shape):
                raise CheckpointError(f"{path}: {name} has shape {a.shape}, expected {tuple(t.shape)}")
            state[name] = torch.from_numpy(a.astype(np.float32)).to(t.dtype)
    model.load_state_dict(state)
    model.to(dtype)
    model.eval()
    return model
