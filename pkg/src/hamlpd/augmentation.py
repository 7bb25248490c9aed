"""Training-time augmentation: modality masking plus the usual photometric/geometric steps.

Nothing here is called on the evaluation path; ``INVOCATIONS`` counts calls so
that can be checked.
"""
from __future__ import annotations

import collections
import dataclasses

import numpy as np
from PIL import Image

from .structures import Box, ScenePair

INVOCATIONS: collections.Counter = collections.Counter()

PATCH_TRIES = 16


@dataclasses.dataclass
class MaskingPolicy:
    p_full_rgb: float = 0.10
    p_full_thermal: float = 0.10
    p_patch_rgb: float = 0.10
    p_patch_thermal: float = 0.10
    patch_min: float = 0.2
    patch_max: float = 0.5

    def __post_init__(self):
        for name in ("p_full_rgb", "p_full_thermal", "p_patch_rgb", "p_patch_thermal"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.p_full_rgb + self.p_full_thermal > 1.0:
            raise ValueError("full-modality masking probabilities must sum to at most 1")
        if not 0.0 < self.patch_min <= self.patch_max <= 1.0:
            raise ValueError("patch size fractions must satisfy 0 < min <= max <= 1")

    @classmethod
    def disabled(cls) -> "MaskingPolicy":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclasses.dataclass
class BaselineAugment:
    """MLPD-style augmentations applied identically to both modalities."""

    flip: float = 0.5
    brightness: float = 0.2
    crop: float = 0.0
    crop_min_scale: float = 0.8


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``, e.g. ``(seed, epoch, sample_index)``."""
    return np.random.default_rng([int(seed), *map(int, keys)])


def _random_patch(rng, h, w, policy):
    ph = max(1, int(round(rng.uniform(policy.patch_min, policy.patch_max) * h)))
    pw = max(1, int(round(rng.uniform(policy.patch_min, policy.patch_max) * w)))
    y0 = int(rng.integers(0, h - ph + 1))
    x0 = int(rng.integers(0, w - pw + 1))
    return y0, x0, ph, pw


def sample_training_masks(rng: np.random.Generator, policy: MaskingPolicy, h: int, w: int):
    """Draw ``(m_rgb, m_thermal)`` for one training sample.

    Full-modality events are mutually exclusive. Patch events are only drawn
    when neither modality is fully masked, with their probabilities rescaled
    so every event keeps its policy frequency. A thermal patch never overlaps an
    RGB patch; placement is rejection-sampled and the event dropped after
    ``PATCH_TRIES`` failures.
    """
    m_rgb = np.ones((h, w), dtype=np.uint8)
    m_th = np.ones((h, w), dtype=np.uint8)
    u = rng.random()
    if u < policy.p_full_rgb:
        m_rgb[:] = 0
        return m_rgb, m_th
    if u < policy.p_full_rgb + policy.p_full_thermal:
        m_th[:] = 0
        return m_rgb, m_th

    p_rest = 1.0 - policy.p_full_rgb - policy.p_full_thermal
    scale = 1.0 / p_rest if p_rest > 0 else 0.0
    patch_rgb = rng.random() < min(1.0, policy.p_patch_rgb * scale)
    patch_th = rng.random() < min(1.0, policy.p_patch_thermal * scale)
    if patch_rgb:
        y0, x0, ph, pw = _random_patch(rng, h, w, policy)
        m_rgb[y0:y0 + ph, x0:x0 + pw] = 0
    if patch_th:
        for _ in range(PATCH_TRIES):
            y0, x0, ph, pw = _random_patch(rng, h, w, policy)
            if m_rgb[y0:y0 + ph, x0:x0 + pw].all():
                m_th[y0:y0 + ph, x0:x0 + pw] = 0
                break
    return m_rgb, m_th


def _check_mask(m, shape, name):
    m = np.asarray(m)
    if m.shape != tuple(shape):
        raise ValueError(f"{name} mask shape {m.shape} does not match image {tuple(shape)}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError(f"{name} mask is not binary")
    return m.astype(np.uint8)


def apply_masks(pair: ScenePair, m_rgb, m_thermal) -> ScenePair:
    """Zero the pixels of each modality where its mask is 0."""
    hw = pair.rgb.shape[:2]
    m_rgb = _check_mask(m_rgb, hw, "rgb")
    m_th = _check_mask(m_thermal, hw, "thermal")
    return pair.replace(rgb=pair.rgb * m_rgb[..., None], thermal=pair.thermal * m_th[..., None])


def _flip(pair: ScenePair) -> ScenePair:
    w = pair.rgb.shape[1]
    gts = [
        dataclasses.replace(g, box=Box(w - g.box.x_max, g.box.y_min, w - g.box.x_min, g.box.y_max))
        for g in pair.gts
    ]
    return pair.replace(
        rgb=np.ascontiguousarray(pair.rgb[:, ::-1]),
        thermal=np.ascontiguousarray(pair.thermal[:, ::-1]),
        gts=gts,
    )


def _crop(pair: ScenePair, rng, min_scale) -> ScenePair:
    h, w = pair.rgb.shape[:2]
    s = rng.uniform(min_scale, 1.0)
    ch, cw = max(2, int(h * s)), max(2, int(w * s))
    y0, x0 = int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1))
    sy, sx = h / ch, w / cw

    def resize(img):
        chans = [
            np.asarray(Image.fromarray(img[y0:y0 + ch, x0:x0 + cw, c]).resize((w, h), Image.BILINEAR))
            for c in range(img.shape[2])
        ]
        return np.stack(chans, axis=-1)

    gts = []
    for g in pair.gts:
        b = g.box
        nb = Box(
            min(max((b.x_min - x0) * sx, 0.0), w),
            min(max((b.y_min - y0) * sy, 0.0), h),
            min(max((b.x_max - x0) * sx, 0.0), w),
            min(max((b.y_max - y0) * sy, 0.0), h),
        )
        # keep boxes that retain at least half of their scaled area
        if nb.width >= 1 and nb.height >= 1 and nb.width * nb.height >= 0.5 * b.width * b.height * sx * sy:
            gts.append(dataclasses.replace(g, box=nb))
    return pair.replace(rgb=resize(pair.rgb), thermal=resize(pair.thermal), gts=gts)


def _jitter(img, rng, amount):
    f = rng.uniform(1.0 - amount, 1.0 + amount)
    return np.clip(img.astype(np.float32) * f, 0, 255).astype(np.uint8)


def baseline_augment(pair: ScenePair, rng: np.random.Generator, cfg: BaselineAugment) -> ScenePair:
    if cfg.crop > 0 and rng.random() < cfg.crop:
        pair = _crop(pair, rng, cfg.crop_min_scale)
    if cfg.flip > 0 and rng.random() < cfg.flip:
        pair = _flip(pair)
    if cfg.brightness > 0:
        pair = pair.replace(
            rgb=_jitter(pair.rgb, rng, cfg.brightness),
            thermal=_jitter(pair.thermal, rng, cfg.brightness),
        )
    return pair


def augment_sample(
    pair: ScenePair,
    rng: np.random.Generator,
    policy: MaskingPolicy | None,
    baseline: BaselineAugment | None = None,
):
    """Training-time entry point: returns ``(pair, m_rgb, m_thermal)`` with the masks applied."""
    INVOCATIONS["augment_sample"] += 1
    if baseline is not None:
        pair = baseline_augment(pair, rng, baseline)
    h, w = pair.rgb.shape[:2]
    if policy is None:
        m_rgb = np.ones((h, w), dtype=np.uint8)
        m_th = np.ones((h, w), dtype=np.uint8)
        return pair, m_rgb, m_th
    m_rgb, m_th = sample_training_masks(rng, policy, h, w)
    return apply_masks(pair, m_rgb, m_th), m_rgb, m_th
