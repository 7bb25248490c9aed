"""Plain data records shared across the pipeline."""
from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np


class Box(NamedTuple):
    """Axis-aligned box in pixel corner coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Box":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width, self.height)

    def is_valid(self) -> bool:
        return self.x_min < self.x_max and self.y_min < self.y_max


@dataclasses.dataclass(frozen=True)
class GroundTruth:
    box: Box
    visible_rgb: bool = True
    visible_thermal: bool = True
    is_ignore: bool = False

    def __post_init__(self):
        object.__setattr__(self, "box", Box(*map(float, self.box)))
        if not self.box.is_valid():
            raise ValueError(f"degenerate box {self.box}")
        if not (self.visible_rgb or self.visible_thermal or self.is_ignore):
            raise ValueError("ground truth must be visible in some modality unless ignored")

    def to_dict(self) -> dict:
        return {
            "box": list(self.box),
            "visible_rgb": bool(self.visible_rgb),
            "visible_thermal": bool(self.visible_thermal),
            "is_ignore": bool(self.is_ignore),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            box=Box(*d["box"]),
            visible_rgb=bool(d.get("visible_rgb", True)),
            visible_thermal=bool(d.get("visible_thermal", True)),
            is_ignore=bool(d.get("is_ignore", False)),
        )


@dataclasses.dataclass(frozen=True)
class Detection:
    box: Box
    score_rgb: float
    score_thermal: float

    @property
    def confidence(self) -> float:
        # the two modality scores are combined by max
        return max(self.score_rgb, self.score_thermal)


@dataclasses.dataclass
class ScenePair:
    """Co-registered RGB (H, W, 3) and thermal (H, W, 1) uint8 images."""

    rgb: np.ndarray
    thermal: np.ndarray
    gts: list[GroundTruth] = dataclasses.field(default_factory=list)
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.thermal.ndim == 2:
            self.thermal = self.thermal[..., None]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be HxWx3, got {self.rgb.shape}")
        if self.thermal.shape[2] != 1:
            raise ValueError(f"thermal must be HxWx1, got {self.thermal.shape}")
        if self.rgb.shape[:2] != self.thermal.shape[:2]:
            raise ValueError(
                f"rgb {self.rgb.shape[:2]} and thermal {self.thermal.shape[:2]} are not co-registered"
            )

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.shape[0], self.rgb.shape[1]

    @property
    def image_id(self) -> str:
        return str(self.meta.get("image_id", ""))

    @property
    def tag(self) -> str:
        return str(self.meta.get("tag", "day"))

    def replace(self, **kw) -> "ScenePair":
        return dataclasses.replace(self, **kw)
