"""Synthetic RGB-T scenes, the on-disk dataset layout, and KAIST annotation import."""
from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .structures import Box, GroundTruth, ScenePair

SPLITS = ("train", "test")
SKIN = np.array([215.0, 170.0, 140.0])
PED_ASPECT = 0.41  # width / height


@dataclasses.dataclass
class SynthConfig:
    height: int = 256
    width: int = 320
    min_pedestrians: int = 1
    max_pedestrians: int = 4
    ped_height: tuple[float, float] = (40.0, 120.0)
    thermal_only_fraction: float = 0.1
    rgb_only_fraction: float = 0.05
    night_fraction: float = 0.35
    night_thermal_only: float = 0.7
    night_dim: float = 0.25
    rgb_noise: float = 12.0
    rgb_texture: float = 1.0
    thermal_noise: float = 8.0
    max_distractors: int = 3
    n_train: int = 200
    n_test: int = 50
    seed: int = 0

    def __post_init__(self):
        self.ped_height = tuple(float(v) for v in self.ped_height)
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        if not 0 <= self.min_pedestrians <= self.max_pedestrians:
            raise ValueError("pedestrian count range is invalid")
        if self.thermal_only_fraction + self.rgb_only_fraction > 1.0 + 1e-12:
            raise ValueError("visibility fractions must sum to at most 1")
        if self.rgb_texture < 0:
            raise ValueError("rgb_texture must be non-negative")
        for name in ("thermal_only_fraction", "rgb_only_fraction", "night_fraction", "night_thermal_only"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.ped_height
        if not 0 < lo <= hi < self.height:
            raise ValueError("pedestrian heights must be positive and fit in the image")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ped_height"] = list(self.ped_height)
        return d


# --------------------------------------------------------------------------- rendering

def _smooth_noise(rng, h, w, cell, channels=1):
    gh, gw = max(2, h // cell + 2), max(2, w // cell + 2)
    out = []
    for _ in range(channels):
        g = rng.random((gh, gw)).astype(np.float32)
        out.append(np.asarray(Image.fromarray(g, mode="F").resize((w, h), Image.BILINEAR)))
    return np.stack(out, axis=-1)


def _person_mask(h, w):
    """Soft silhouette (head + torso + legs) of size h x w with values in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cx = (w - 1) / 2.0
    head_r = max(1.0, 0.11 * h)
    head = ((xx - cx) ** 2 + (yy - head_r) ** 2) <= head_r ** 2
    body = (yy >= 1.6 * head_r) & (np.abs(xx - cx) <= 0.5 * w)
    return (head | body).astype(np.float32)


def _place_boxes(rng, cfg, n):
    boxes = []
    lo, hi = cfg.ped_height
    for _ in range(n):
        for _ in range(20):
            ph = float(rng.uniform(lo, hi))
            pw = max(2.0, PED_ASPECT * ph)
            x0 = float(rng.uniform(0, cfg.width - pw))
            y0 = float(rng.uniform(0, cfg.height - ph))
            b = Box(round(x0), round(y0), round(x0 + pw), round(y0 + ph))
            if b.is_valid() and all(_overlap(b, o) < 0.2 for o in boxes):
                boxes.append(b)
                break
    return boxes


def _overlap(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.width * a.height + b.width * b.height - inter)


def generate_scene(rng: np.random.Generator, cfg: SynthConfig, image_id: str = "") -> ScenePair:
    """Render one scene.

    Thermal-visible pedestrians are warm silhouettes on a cool background;
    RGB-visible ones are coloured silhouettes on a textured background. Night
    scenes darken the RGB image and favour thermal-only pedestrians.
    """
    h, w = cfg.height, cfg.width
    night = bool(rng.random() < cfg.night_fraction)
    n = int(rng.integers(cfg.min_pedestrians, cfg.max_pedestrians + 1))

    tex = cfg.rgb_texture
    rgb = (140.0 - 70.0 * tex) + tex * (110.0 * _smooth_noise(rng, h, w, 16, 3) + 30.0 * _smooth_noise(rng, h, w, 4, 3))
    thermal = 40.0 + 50.0 * _smooth_noise(rng, h, w, 24, 1)

    # clutter: wide blocks that are warm or coloured but not person-shaped
    for _ in range(int(rng.integers(0, cfg.max_distractors + 1))):
        dh = int(rng.uniform(0.08, 0.25) * h)
        dw = int(rng.uniform(0.8, 2.5) * dh)
        dw = max(1, min(dw, w - 1))
        y0 = int(rng.integers(0, max(1, h - dh)))
        x0 = int(rng.integers(0, max(1, w - dw)))
        if rng.random() < 0.5:
            thermal[y0:y0 + dh, x0:x0 + dw] += rng.uniform(40, 110)
        else:
            rgb[y0:y0 + dh, x0:x0 + dw] = rng.uniform(0, 255, size=3)

    gts = []
    for b in _place_boxes(rng, cfg, n):
        u = rng.random()
        if night:
            thermal_only = u < max(cfg.night_thermal_only, cfg.thermal_only_fraction)
            rgb_only = False
        else:
            thermal_only = u < cfg.thermal_only_fraction
            rgb_only = (not thermal_only) and u < cfg.thermal_only_fraction + cfg.rgb_only_fraction
        vis_rgb, vis_th = not thermal_only, not rgb_only
        x0, y0, x1, y1 = (int(v) for v in b)
        sil = _person_mask(y1 - y0, x1 - x0)[..., None]
        if vis_rgb:
            colour = rng.uniform(0, 255, size=3)
            # push the clothing colour away from the local background
            local = rgb[y0:y1, x0:x1].mean(axis=(0, 1))
            colour = np.where(np.abs(colour - local) < 60, 255 - local, colour)
            patch = np.broadcast_to(colour, sil.shape[:2] + (3,)).copy()
            # skin-toned head and dark trousers give a colour-independent cue
            ph = y1 - y0
            patch[:int(0.22 * ph)] = SKIN + rng.normal(0, 12, size=3)
            patch[int(0.6 * ph):] = rng.uniform(20, 70)
            patch += rng.normal(0, 10, size=patch.shape)
            rgb[y0:y1, x0:x1] = sil * patch + (1 - sil) * rgb[y0:y1, x0:x1]
        if vis_th:
            warm = rng.uniform(170, 230)
            patch = warm + rng.normal(0, 6, size=sil.shape)
            thermal[y0:y1, x0:x1] = sil * patch + (1 - sil) * thermal[y0:y1, x0:x1]
        gts.append(GroundTruth(b, visible_rgb=vis_rgb, visible_thermal=vis_th))

    if night:
        rgb *= cfg.night_dim
    rgb += rng.normal(0, cfg.rgb_noise * (cfg.night_dim if night else 1.0), size=rgb.shape)
    thermal += rng.normal(0, cfg.thermal_noise, size=thermal.shape)
    return ScenePair(
        rgb=np.clip(rgb, 0, 255).astype(np.uint8),
        thermal=np.clip(thermal, 0, 255).astype(np.uint8),
        gts=gts,
        meta={"image_id": image_id, "tag": "night" if night else "day"},
    )


def scene_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), SPLITS.index(split), int(index)])


def scene_id(split: str, index: int) -> str:
    return f"{split}_{index:05d}"


def generate_split(cfg: SynthConfig, split: str, n: int | None = None) -> list[ScenePair]:
    """In-memory scenes for ``split``; identical to what ``generate_dataset`` writes."""
    if n is None:
        n = cfg.n_train if split == "train" else cfg.n_test
    return [generate_scene(scene_rng(cfg.seed, split, i), cfg, scene_id(split, i)) for i in range(n)]


# --------------------------------------------------------------------------- on-disk format

def annotation_dict(pair: ScenePair) -> dict:
    return {
        "image_id": pair.image_id,
        "tag": pair.tag,
        "size": [int(pair.rgb.shape[0]), int(pair.rgb.shape[1])],
        "objects": [g.to_dict() for g in pair.gts],
    }


def save_annotations(path, pair: ScenePair) -> None:
    Path(path).write_text(json.dumps(annotation_dict(pair), indent=1))


def load_annotations(path) -> tuple[list[GroundTruth], dict]:
    d = json.loads(Path(path).read_text())
    gts = [GroundTruth.from_dict(o) for o in d.get("objects", [])]
    meta = {"image_id": d.get("image_id", ""), "tag": d.get("tag", "day")}
    return gts, meta


def write_pair(root, pair: ScenePair) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    iid = pair.image_id
    Image.fromarray(pair.rgb).save(root / "images" / f"{iid}_rgb.png")
    Image.fromarray(pair.thermal[..., 0]).save(root / "images" / f"{iid}_thermal.png")
    save_annotations(root / "annotations" / f"{iid}.json", pair)


def read_pair(root, image_id: str) -> ScenePair:
    root = Path(root)
    rgb = np.asarray(Image.open(root / "images" / f"{image_id}_rgb.png").convert("RGB"))
    thermal = np.asarray(Image.open(root / "images" / f"{image_id}_thermal.png").convert("L"))
    gts, meta = load_annotations(root / "annotations" / f"{image_id}.json")
    return ScenePair(rgb=rgb, thermal=thermal, gts=gts, meta=meta)


def generate_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write train/test PNG pairs, per-image JSON annotations and ``manifest.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"config": cfg.to_dict()}
        for split in SPLITS:
            entries = []
            for pair in generate_split(cfg, split):
                write_pair(out, pair)
                entries.append({"image_id": pair.image_id, "tag": pair.tag})
            manifest[split] = entries
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    except OSError as e:
        raise OSError(f"failed writing dataset under {out}: {e}") from e
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


def load_split(root, split: str) -> list[ScenePair]:
    manifest = load_manifest(root)
    if split not in manifest:
        raise KeyError(f"split {split!r} not in manifest {Path(root) / 'manifest.json'}")
    return [read_pair(root, e["image_id"]) for e in manifest[split]]


# --------------------------------------------------------------------------- KAIST text import

class AnnotationParseError(ValueError):
    """Malformed lines in an annotation file; ``errors`` holds ``(line_number, reason)``."""

    def __init__(self, path, errors):
        self.path = str(path)
        self.errors = list(errors)
        lines = "; ".join(f"line {n}: {r}" for n, r in self.errors)
        super().__init__(f"{self.path}: {lines}")

    @property
    def line_numbers(self) -> list[int]:
        return [n for n, _ in self.errors]


EVAL_LABELS = {"person"}
IGNORE_LABELS = {"people", "person?", "cyclist", "person?a"}


def _floats(fields, n, what):
    if len(fields) < n:
        raise ValueError(f"expected {n} {what} values, got {len(fields)}")
    try:
        vals = [float(v) for v in fields[:n]]
    except ValueError:
        bad = next(v for v in fields[:n] if not _is_number(v))
        raise ValueError(f"non-numeric {what} field {bad!r}") from None
    if not all(np.isfinite(vals)):
        raise ValueError(f"non-finite {what} value")
    return vals


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _parse_bbgt(fields):
    label = fields[0]
    x, y, w, h = _floats(fields[1:], 4, "box")
    rest = fields[5:]
    occ = int(_floats(rest, 1, "occlusion")[0]) if rest else 0
    ign = int(_floats(rest[5:], 1, "ignore")[0]) if len(rest) > 5 else 0
    if w <= 0 or h <= 0:
        raise ValueError(f"non-positive box size {w}x{h}")
    ignore = label not in EVAL_LABELS or occ >= 2 or ign != 0
    if label not in EVAL_LABELS | IGNORE_LABELS:
        raise ValueError(f"unknown label {label!r}")
    return GroundTruth(Box.from_xywh(x, y, w, h), True, True, is_ignore=ignore)


def _parse_paired(fields):
    label = fields[0]
    if label not in EVAL_LABELS | IGNORE_LABELS:
        raise ValueError(f"unknown label {label!r}")
    xr, yr, wr, hr, xt, yt, wt, ht = _floats(fields[1:], 8, "box")
    rest = fields[9:]
    occ = int(_floats(rest, 1, "occlusion")[0]) if rest else 0
    ign = int(_floats(rest[1:], 1, "ignore")[0]) if len(rest) > 1 else 0
    vis_rgb, vis_th = wr > 0 and hr > 0, wt > 0 and ht > 0
    if not (vis_rgb or vis_th):
        raise ValueError("object has no box in either modality")
    if min(wr, hr) < 0 or min(wt, ht) < 0:
        raise ValueError("negative box size")
    box = Box.from_xywh(xr, yr, wr, hr) if vis_rgb else Box.from_xywh(xt, yt, wt, ht)
    ignore = label not in EVAL_LABELS or occ >= 2 or ign != 0
    return GroundTruth(box, vis_rgb, vis_th, is_ignore=ignore)


def load_kaist_annotations(path) -> list[GroundTruth]:
    """Parse a KAIST-style text annotation file into corner-format ground truths.

    Two layouts are understood, chosen by the header line:

    * ``% bbGt version=3`` (sanitized, one box per object)::

          label x y w h occ vx vy vw vh ign ang

      Only ``occ`` and ``ign`` are read from the trailing fields, and both are optional.
    * ``% paired version=1`` (one line per object with a box per modality)::

          label x_rgb y_rgb w_rgb h_rgb x_th y_th w_th h_th [occ [ign]]

      A zero-sized box marks the object as absent from that modality.

    Labels other than ``person`` (``people``, ``person?``, ``cyclist``), heavy
    occlusion (``occ >= 2``) and a non-zero ignore flag all map to
    ``is_ignore``. Every malformed line is collected into one
    :class:`AnnotationParseError`.
    """
    path = Path(path)
    text = path.read_text()
    parser = _parse_bbgt
    gts, errors = [], []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("%"):
            if "paired" in line:
                parser = _parse_paired
            continue
        try:
            gts.append(parser(line.split()))
        except ValueError as e:
            errors.append((n, str(e)))
    if errors:
        raise AnnotationParseError(path, errors)
    return gts


def load_kaist_directory(root, pattern: str = "*.txt") -> dict[str, list[GroundTruth]]:
    """Parse every annotation file under ``root``, keyed by file stem."""
    return {p.stem: load_kaist_annotations(p) for p in sorted(Path(root).rglob(pattern)) if os.path.isfile(p)}
