import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamlpd.evaluation import (
    FP,
    IGNORED,
    REFERENCE_FPPI,
    TP,
    MRCurve,
    evaluate_detections,
    evaluate_image,
    log_average_miss_rate,
    match_image,
    metrics_records,
    miss_rate_curve,
    read_metrics,
    reasonable,
    sample_curve,
    write_metrics,
)
from hamlpd.structures import Box, Detection, GroundTruth

from oracles import exhaustive_greedy_match, mr_by_enumeration


def D(box, s):
    return Detection(Box(*box), s, 0.0)


def G(box, ignore=False):
    return GroundTruth(Box(*box), True, True, ignore)


def mr_of(images):
    res = [evaluate_image([D(b, s) for b, s in dets], [G(b, i) for b, i in gts]) for dets, gts in images]
    return log_average_miss_rate(miss_rate_curve(res))


FIXTURES = [
    # perfect single detection plus one FP in another image
    [([((0, 0, 10, 20), 0.9)], [((0, 0, 10, 20), False)]), ([((50, 50, 60, 70), 0.4)], [])],
    # two gts, one missed, one ignore region absorbing a detection
    [([((0, 0, 10, 20), 0.8), ((30, 0, 40, 20), 0.7), ((100, 0, 110, 20), 0.95)],
      [((0, 0, 10, 20), False), ((60, 0, 70, 20), False), ((100, 0, 110, 20), True)])],
    # duplicate detections on one gt, tied scores across images
    [([((0, 0, 10, 20), 0.6), ((1, 0, 11, 20), 0.6)], [((0, 0, 10, 20), False)]),
     ([((5, 5, 15, 25), 0.6)], [((5, 5, 15, 25), False), ((40, 0, 50, 20), False)]),
     ([((70, 0, 80, 20), 0.3)], [])],
    # many images, no detections at all on some
    [([], [((0, 0, 10, 20), False)]), ([((0, 0, 10, 20), 0.2)], [((0, 0, 10, 20), False)])] + [([], [])] * 6,
]


@pytest.mark.parametrize("images", FIXTURES)
def test_matches_enumeration_oracle(images):
    expected, _ = mr_by_enumeration(images)
    assert mr_of(images) == pytest.approx(expected, abs=1e-9)


def random_images(rng, n_img):
    images = []
    for _ in range(n_img):
        gts = []
        for _ in range(rng.integers(0, 4)):
            x, y = rng.uniform(0, 100, 2)
            gts.append(((x, y, x + 10, y + 20), bool(rng.random() < 0.15)))
        dets = []
        for g, _ in gts:
            if rng.random() < 0.7:
                d = rng.normal(0, 2, 4)
                dets.append((tuple(np.add(g, d).tolist()), float(np.round(rng.random(), 2))))
        for _ in range(rng.integers(0, 4)):
            x, y = rng.uniform(0, 100, 2)
            dets.append(((x, y, x + 10, y + 20), float(np.round(rng.random(), 2))))
        images.append((dets, gts))
    return images


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_random_fixtures_match_oracle(seed, n_img):
    images = random_images(np.random.default_rng(seed), n_img)
    if sum(not i for _, gts in images for _, i in gts) == 0:
        return
    assert mr_of(images) == pytest.approx(mr_by_enumeration(images)[0], abs=1e-9)


def test_perfect_and_empty_detectors():
    gts = [((0, 0, 10, 20), False), ((30, 0, 40, 20), False)]
    perfect = [([(b, 0.9) for b, _ in gts], gts)]
    assert mr_of(perfect) <= 100 / (10 * 2) + 1e-12
    assert mr_of([([], gts)]) == 100.0


def test_step_sampling_and_fallback():
    curve = MRCurve(np.array([0.9, 0.5, 0.1]), np.array([0.05, 0.2, 2.0]), np.array([0.6, 0.4, 0.1]), 10)
    s = sample_curve(curve)
    # below the first fppi no point qualifies: the highest miss rate is used
    assert s[:3].tolist() == [0.6, 0.6, 0.6]
    assert s[3] == 0.6  # ref 0.0562 >= 0.05
    assert s[-1] == 0.4
    expected = 100 * math.exp(np.mean(np.log(s)))
    assert log_average_miss_rate(curve) == pytest.approx(expected)


def test_reference_points():
    assert len(REFERENCE_FPPI) == 9
    assert REFERENCE_FPPI[0] == pytest.approx(0.01) and REFERENCE_FPPI[-1] == pytest.approx(1.0)


def test_no_ground_truth_raises():
    with pytest.raises(ValueError):
        miss_rate_curve([evaluate_image([], [])])


def test_extra_tp_never_hurts():
    rng = np.random.default_rng(1)
    for _ in range(30):
        images = random_images(rng, 4)
        images[0][1].append(((200, 200, 210, 220), False))
        base = mr_of(images)
        images[0][0].append(((200, 200, 210, 220), 1.0))
        assert mr_of(images) <= base + 1e-9


def test_extra_fp_never_helps():
    rng = np.random.default_rng(2)
    for _ in range(30):
        images = random_images(rng, 4)
        images[0][1].append(((200, 200, 210, 220), False))
        base = mr_of(images)
        images[1][0].append(((400, 400, 410, 420), float(rng.random())))
        assert mr_of(images) >= base - 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_greedy_matching_against_exhaustive(seed):
    rng = np.random.default_rng(seed)
    gts = [tuple(rng.uniform(0, 20, 2).tolist()) for _ in range(rng.integers(1, 4))]
    gts = [(x, y, x + 10, y + 10) for x, y in gts]
    ign = [bool(rng.random() < 0.3) for _ in gts]
    dets = [tuple(np.add(gts[rng.integers(len(gts))], rng.normal(0, 3, 4)).tolist()) for _ in range(rng.integers(1, 5))]
    dets = [(min(a, c), min(b, d), max(a, c) + 0.5, max(b, d) + 0.5) for a, b, c, d in dets]
    status, matched = match_image([D(b, 1.0) for b in dets], [G(b, i) for b, i in zip(gts, ign)])
    assert status.tolist() == exhaustive_greedy_match(dets, gts, ign)
    assert not matched[np.array(ign)].any()


def test_reasonable_filter():
    out = reasonable([G((0, 0, 10, 54)), G((0, 0, 10, 55)), G((0, 0, 10, 80), ignore=True)])
    assert [g.is_ignore for g in out] == [True, False, True]


def test_match_statuses():
    status, _ = match_image([D((0, 0, 10, 10), 0.9), D((0, 0, 10, 10), 0.8), D((50, 50, 60, 60), 0.7)],
                            [G((0, 0, 10, 10)), G((50, 50, 60, 60), ignore=True)])
    assert status.tolist() == [TP, FP, IGNORED]


def test_day_night_splits_and_records(tmp_path):
    gts = {"a": [G((0, 0, 10, 60))], "b": [G((0, 0, 10, 60))]}
    dets = {"a": [D((0, 0, 10, 60), 0.9)]}
    res = evaluate_detections(dets, gts, {"a": "day", "b": "night"})
    assert res["night"]["mr"] == 100.0
    assert res["day"]["mr"] == pytest.approx(10.0)
    empty = evaluate_detections({}, {"c": []}, {"c": "day"})
    assert empty["all"] is None
    recs = metrics_records("dual", res)
    write_metrics(tmp_path / "m.json", recs)
    back = read_metrics(tmp_path / "m.json")
    assert [r["split"] for r in back] == ["all", "day", "night"]
    curve = MRCurve.from_dict(back[0]["curve"])
    assert log_average_miss_rate(curve) == pytest.approx(res["all"]["mr"])
