"""Inference-time blackout scenarios (sensor failure and partial overlap)."""
from __future__ import annotations

import enum

import numpy as np

# border fractions of the reference 512x640 surrounding crop (96/512 == 120/640)
SURROUND_FRACTION = 0.1875


class Scenario(str, enum.Enum):
    DUAL = "dual"
    RGB_BLACKOUT = "rgb_blackout"
    THERMAL_BLACKOUT = "thermal_blackout"
    SIDES_RGB_THERMAL = "sides_rt"
    SIDES_THERMAL_RGB = "sides_tr"
    SURROUNDING = "surrounding"

    @classmethod
    def parse(cls, name: str | "Scenario") -> "Scenario":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(
                f"unknown scenario {name!r}; expected one of {[s.value for s in cls]}"
            ) from None


PARTIAL_SCENARIOS = (Scenario.SIDES_RGB_THERMAL, Scenario.SIDES_THERMAL_RGB, Scenario.SURROUNDING)
ALL_SCENARIOS = tuple(Scenario)


def surround_border(h: int, w: int) -> tuple[int, int]:
    """Rows cropped top/bottom and columns cropped left/right for SURROUNDING."""
    return int(np.floor(SURROUND_FRACTION * h)), int(np.floor(SURROUND_FRACTION * w))


def scenario_masks(h: int, w: int, scenario: Scenario | str) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(m_rgb, m_thermal)`` uint8 maps, 1 where the modality has data.

    Sides scenarios zero ``w // 3`` columns on opposite sides; the centre portion
    absorbs the remainder when ``w`` is not a multiple of three.
    """
    s = Scenario.parse(scenario)
    if int(h) != h or int(w) != w or h < 1 or w < 1:
        raise ValueError(f"invalid mask size {h}x{w}")
    h, w = int(h), int(w)
    m_rgb = np.ones((h, w), dtype=np.uint8)
    m_th = np.ones((h, w), dtype=np.uint8)
    third = w // 3
    if s is Scenario.RGB_BLACKOUT:
        m_rgb[:] = 0
    elif s is Scenario.THERMAL_BLACKOUT:
        m_th[:] = 0
    elif s is Scenario.SIDES_RGB_THERMAL:
        if third < 1:
            raise ValueError(f"width {w} too small for a sides blackout")
        m_rgb[:, :third] = 0
        m_th[:, w - third:] = 0
    elif s is Scenario.SIDES_THERMAL_RGB:
        if third < 1:
            raise ValueError(f"width {w} too small for a sides blackout")
        m_th[:, :third] = 0
        m_rgb[:, w - third:] = 0
    elif s is Scenario.SURROUNDING:
        by, bx = surround_border(h, w)
        if h - 2 * by < 1 or w - 2 * bx < 1:
            raise ValueError(f"size {h}x{w} leaves no centre crop")
        m_th[:] = 0
        m_th[by:h - by, bx:w - bx] = 1
    return m_rgb, m_th


def apply_scenario(pair, scenario: Scenario | str):
    """Zero the blacked-out pixels of ``pair``; returns ``(pair, m_rgb, m_thermal)``."""
    from .augmentation import apply_masks

    h, w = pair.rgb.shape[:2]
    m_rgb, m_th = scenario_masks(h, w, scenario)
    return apply_masks(pair, m_rgb, m_th), m_rgb, m_th
