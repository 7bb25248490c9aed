import json
from pathlib import Path

import numpy as np
import pytest

from hamlpd.data import (
    AnnotationParseError,
    SynthConfig,
    generate_dataset,
    generate_scene,
    generate_split,
    load_kaist_annotations,
    load_kaist_directory,
    load_manifest,
    load_split,
    read_pair,
    scene_rng,
    write_pair,
)
from hamlpd.structures import Box, GroundTruth

from toy import tiny_synth_config

FIXTURES = Path(__file__).parent / "fixtures"
EXPECTED = json.loads((FIXTURES / "kaist_expected.json").read_text())


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(thermal_only_fraction=0.8, rgb_only_fraction=0.5)
    with pytest.raises(ValueError):
        SynthConfig(height=64, ped_height=(10, 80))
    with pytest.raises(ValueError, match="unknown"):
        SynthConfig.from_dict({"heigth": 10})
    cfg = SynthConfig(seed=4)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_scene_contract():
    cfg = SynthConfig(height=64, width=80, ped_height=(10, 40))
    pair = generate_scene(scene_rng(0, "train", 0), cfg, "x")
    assert pair.rgb.shape == (64, 80, 3) and pair.thermal.shape == (64, 80, 1)
    assert pair.rgb.dtype == np.uint8 and pair.thermal.dtype == np.uint8
    assert pair.image_id == "x" and pair.tag in ("day", "night")
    for g in pair.gts:
        assert 0 <= g.box.x_min < g.box.x_max <= 80 and 0 <= g.box.y_min < g.box.y_max <= 64
        assert g.visible_rgb or g.visible_thermal


def test_generation_is_deterministic_and_split_independent():
    cfg = tiny_synth_config()
    a, b = generate_split(cfg, "train"), generate_split(cfg, "train")
    assert all(np.array_equal(x.rgb, y.rgb) and x.gts == y.gts for x, y in zip(a, b))
    test = generate_split(cfg, "test")
    assert not np.array_equal(a[0].rgb, test[0].rgb)
    other = generate_split(tiny_synth_config(seed=1), "train")
    assert not np.array_equal(a[0].rgb, other[0].rgb)


def test_visibility_statistics():
    cfg = SynthConfig(height=48, width=48, ped_height=(12, 30), night_fraction=0.0,
                      thermal_only_fraction=0.2, rgb_only_fraction=0.1, max_distractors=0)
    gts = [g for i in range(600) for g in generate_scene(scene_rng(3, "train", i), cfg).gts]
    th_only = np.mean([g.visible_thermal and not g.visible_rgb for g in gts])
    rgb_only = np.mean([g.visible_rgb and not g.visible_thermal for g in gts])
    assert abs(th_only - 0.2) < 0.04 and abs(rgb_only - 0.1) < 0.04


def test_night_fraction_matches_config():
    cfg = SynthConfig(height=16, width=16, ped_height=(4, 8), max_pedestrians=1, max_distractors=0)
    tags = [generate_scene(scene_rng(0, "train", i), cfg).tag for i in range(10_000)]
    assert abs(np.mean([t == "night" for t in tags]) - cfg.night_fraction) <= 0.02


def test_thermal_silhouette_is_warm():
    cfg = SynthConfig(height=64, width=64, ped_height=(30, 50), thermal_only_fraction=0.0, rgb_only_fraction=0.0,
                      night_fraction=0.0, max_distractors=0, min_pedestrians=1, max_pedestrians=1)
    pair = generate_scene(scene_rng(0, "train", 1), cfg)
    b = pair.gts[0].box
    cx, cy = int((b.x_min + b.x_max) / 2), int(b.y_min + 0.6 * b.height)
    assert pair.thermal[cy, cx, 0] > pair.thermal[..., 0].mean() + 40


def test_dataset_round_trip(tmp_path):
    cfg = tiny_synth_config(n_train=3, n_test=2)
    manifest = generate_dataset(cfg, tmp_path)
    assert load_manifest(tmp_path) == manifest
    assert [e["image_id"] for e in manifest["train"]] == ["train_00000", "train_00001", "train_00002"]
    loaded = load_split(tmp_path, "test")
    for orig, back in zip(generate_split(cfg, "test"), loaded):
        assert np.array_equal(orig.rgb, back.rgb) and np.array_equal(orig.thermal, back.thermal)
        assert orig.gts == back.gts and orig.tag == back.tag
    with pytest.raises(KeyError):
        load_split(tmp_path, "val")
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope")


def test_write_read_pair(tmp_path):
    pair = generate_split(tiny_synth_config(), "train", 1)[0]
    write_pair(tmp_path, pair)
    back = read_pair(tmp_path, pair.image_id)
    assert back.meta["image_id"] == pair.image_id and back.gts == pair.gts


def as_dicts(gts):
    return [g.to_dict() for g in gts]


@pytest.mark.parametrize("stem", [k for k in EXPECTED if k != "errors"])
def test_kaist_fixture_files(stem):
    got = load_kaist_annotations(FIXTURES / "kaist" / f"{stem}.txt")
    assert as_dicts(got) == EXPECTED[stem]


def test_kaist_single_line_example(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("% bbGt version=3\nperson 100 120 40 90 0 0 0 0 0 0 0\n")
    assert load_kaist_annotations(p) == [GroundTruth(Box(100, 120, 140, 210))]


def test_kaist_directory():
    out = load_kaist_directory(FIXTURES / "kaist")
    assert sorted(out) == sorted(k for k in EXPECTED if k != "errors")


@pytest.mark.parametrize("name", sorted(EXPECTED["errors"]))
def test_kaist_malformed_files_report_lines(name):
    path = FIXTURES / "kaist_bad" / name
    with pytest.raises(AnnotationParseError) as info:
        load_kaist_annotations(path)
    err = info.value
    assert err.line_numbers == EXPECTED["errors"][name]
    assert err.path == str(path)
    for n in err.line_numbers:
        assert f"line {n}:" in str(err)
    assert all(reason for _, reason in err.errors)
