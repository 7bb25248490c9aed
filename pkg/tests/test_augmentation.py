import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamlpd import augmentation as aug
from hamlpd.augmentation import (
    BaselineAugment,
    MaskingPolicy,
    apply_masks,
    augment_sample,
    baseline_augment,
    rng_for,
    sample_training_masks,
)
from hamlpd.structures import Box, GroundTruth, ScenePair


def make_pair(h=24, w=32):
    rng = np.random.default_rng(0)
    return ScenePair(
        rgb=rng.integers(1, 255, (h, w, 3), dtype=np.uint8),
        thermal=rng.integers(1, 255, (h, w, 1), dtype=np.uint8),
        gts=[GroundTruth(Box(2, 3, 10, 20), True, True)],
        meta={"image_id": "x"},
    )


def classify(m_rgb, m_th):
    full_r, full_t = not m_rgb.any(), not m_th.any()
    patch_r = not full_r and not m_rgb.all()
    patch_t = not full_t and not m_th.all()
    return full_r, full_t, patch_r, patch_t


def test_policy_validation():
    with pytest.raises(ValueError):
        MaskingPolicy(p_full_rgb=1.2)
    with pytest.raises(ValueError):
        MaskingPolicy(p_full_rgb=0.6, p_full_thermal=0.6)
    with pytest.raises(ValueError):
        MaskingPolicy(patch_min=0.6, patch_max=0.5)


def test_disabled_policy_never_masks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m_r, m_t = sample_training_masks(rng, MaskingPolicy.disabled(), 8, 8)
        assert m_r.all() and m_t.all()


def test_event_frequencies_and_no_co_mask():
    counts = np.zeros(4)
    n = 10_000
    for i in range(n):
        m_r, m_t = sample_training_masks(rng_for(0, i), MaskingPolicy(), 16, 20)
        counts += classify(m_r, m_t)
        assert (m_r | m_t).all()
    freq = counts / n
    assert np.all(np.abs(freq - 0.10) <= 0.01), freq


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 1))
def test_never_masks_both_modalities_at_one_pixel(seed, fr, ft, pr, pt):
    policy = MaskingPolicy(fr, ft, pr, pt)
    m_r, m_t = sample_training_masks(np.random.default_rng(seed), policy, 12, 15)
    assert (m_r | m_t).all()
    assert m_r.dtype == np.uint8 and set(np.unique(m_r)) <= {0, 1}


def test_patch_sizes_within_bounds():
    policy = MaskingPolicy(0, 0, 1.0, 0.0, patch_min=0.25, patch_max=0.5)
    for i in range(100):
        m_r, _ = sample_training_masks(rng_for(1, i), policy, 40, 40)
        rows = np.flatnonzero((m_r == 0).any(axis=1))
        cols = np.flatnonzero((m_r == 0).any(axis=0))
        assert 10 <= len(rows) <= 20 and 10 <= len(cols) <= 20
        assert (m_r[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] == 0).all()


def test_apply_masks():
    p = make_pair()
    m_r = np.ones((24, 32), np.uint8)
    m_r[:, :5] = 0
    out = apply_masks(p, m_r, np.ones((24, 32), np.uint8))
    assert (out.rgb[:, :5] == 0).all() and np.array_equal(out.rgb[:, 5:], p.rgb[:, 5:])
    assert np.array_equal(out.thermal, p.thermal)
    assert out.gts == p.gts
    with pytest.raises(ValueError):
        apply_masks(p, np.ones((24, 31)), m_r)
    with pytest.raises(ValueError):
        apply_masks(p, np.full((24, 32), 2), m_r)


def test_flip_mirrors_boxes():
    p = make_pair()
    out = baseline_augment(p, np.random.default_rng(0), BaselineAugment(flip=1.0, brightness=0.0))
    assert tuple(out.gts[0].box) == (22, 3, 30, 20)
    assert np.array_equal(out.rgb, p.rgb[:, ::-1])


def test_crop_keeps_size_and_boxes_inside():
    p = make_pair()
    for i in range(20):
        out = baseline_augment(p, rng_for(2, i), BaselineAugment(flip=0.0, brightness=0.0, crop=1.0, crop_min_scale=0.6))
        assert out.rgb.shape == p.rgb.shape and out.thermal.shape == p.thermal.shape
        for g in out.gts:
            assert 0 <= g.box.x_min < g.box.x_max <= 32 and 0 <= g.box.y_min < g.box.y_max <= 24


def test_augment_sample_deterministic_per_key():
    p = make_pair()
    a = augment_sample(p, rng_for(5, 1, 2), MaskingPolicy(), BaselineAugment())
    b = augment_sample(p, rng_for(5, 1, 2), MaskingPolicy(), BaselineAugment())
    assert np.array_equal(a[0].rgb, b[0].rgb) and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_augment_sample_counts_invocations():
    before = aug.INVOCATIONS["augment_sample"]
    _, m_r, m_t = augment_sample(make_pair(), np.random.default_rng(0), None)
    assert m_r.all() and m_t.all()
    assert aug.INVOCATIONS["augment_sample"] == before + 1
