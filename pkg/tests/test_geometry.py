import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from add_distill.errors import DomainError, FormatError
from add_distill.geometry import (
    BevBox,
    Box2D,
    Box3D,
    Detection,
    GroundTruth,
    ap_from_flags,
    ap_table,
    average_precision_40,
    iou_3d,
    make_foreground_mask,
    match_detections,
    normalize_yaw,
    parse_record,
    read_records,
    rotated_iou_bev,
    write_records,
)
from oracles import ap40_envelope, mask_indicator, monte_carlo_iou

coord = st.floats(-5, 5)
extent = st.floats(0.2, 4)
angle = st.floats(-4, 4)
boxes = st.builds(BevBox, coord, coord, extent, extent, angle)


def test_mask_examples():
    assert not make_foreground_mask([], 4, 4).mask.any()
    assert make_foreground_mask([Box2D(0, 0, 4, 4)], 4, 4).mask.all()
    m = make_foreground_mask([Box2D(1, 0, 3, 2)], 4, 4).mask
    assert np.array_equal(m, mask_indicator([Box2D(1, 0, 3, 2)], 4, 4))
    # frozen from the indicator: columns 1-2 of rows 0-1
    assert np.array_equal(np.argwhere(m), [[0, 1], [0, 2], [1, 1], [1, 2]])


def test_mask_union_is_or():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = []
        for _ in range(2):
            (x1, x2), (y1, y2) = sorted(rng.uniform(0, 8, 2)), sorted(rng.uniform(0, 6, 2))
            a.append(Box2D(x1, y1, x2, y2))
        b = [Box2D(1, 1, 3.5, 2.5)]
        m_ab = make_foreground_mask(a + b, 6, 8).mask
        assert np.array_equal(m_ab, np.maximum(make_foreground_mask(a, 6, 8).mask, make_foreground_mask(b, 6, 8).mask))


def test_iou_examples():
    a = BevBox(0, 0, 2, 1, 0.4)
    assert rotated_iou_bev(a, a) == pytest.approx(1.0, abs=1e-12)
    assert rotated_iou_bev(a, BevBox(10, 10, 1, 1)) == 0.0
    assert rotated_iou_bev(BevBox(0, 0, 1, 1), BevBox(0.5, 0, 1, 1)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_3d_examples():
    cube = Box3D(BevBox(0, 0, 1, 1), 0.0, 1.0)
    assert iou_3d(cube, cube) == pytest.approx(1.0, abs=1e-12)
    assert iou_3d(cube, Box3D(BevBox(0, 0, 1, 1), 2.0, 1.0)) == 0.0
    assert iou_3d(cube, Box3D(BevBox(0.5, 0, 1, 1), 0.0, 1.0)) == pytest.approx(1 / 3, abs=1e-12)


def test_degenerate_box_rejected():
    with pytest.raises(DomainError):
        rotated_iou_bev(BevBox(0, 0, 0, 1), BevBox(0, 0, 1, 1))


def test_iou_against_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = BevBox(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 3, 2), rng.uniform(-3, 3))
        b = BevBox(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 3, 2), rng.uniform(-3, 3))
        assert abs(rotated_iou_bev(a, b) - monte_carlo_iou(a, b, 100_000, rng)) < 0.01


@settings(max_examples=200, deadline=None)
@given(boxes, boxes, st.floats(-math.pi, math.pi))
def test_iou_symmetric_and_rotation_invariant(a, b, theta):
    iou = rotated_iou_bev(a, b)
    assert 0.0 <= iou <= 1.0
    assert abs(iou - rotated_iou_bev(b, a)) < 1e-9
    c, s = math.cos(theta), math.sin(theta)

    def rot(box):
        return BevBox(c * box.x - s * box.z, s * box.x + c * box.z, box.length, box.width, box.yaw + theta)

    assert abs(iou - rotated_iou_bev(rot(a), rot(b))) < 1e-9


def test_normalize_yaw_range():
    assert normalize_yaw(-math.pi) == pytest.approx(math.pi)
    assert normalize_yaw(3 * math.pi) == pytest.approx(math.pi)
    assert normalize_yaw(0.5) == 0.5


def _scene_two_gt():
    gts = [GroundTruth(BevBox(0, 10, 4, 2), "car"), GroundTruth(BevBox(10, 20, 4, 2), "car")]
    dets = [
        Detection(BevBox(0, 10, 4, 2), "car", 0.9),
        Detection(BevBox(30, 30, 4, 2), "car", 0.8),
        Detection(BevBox(10, 20, 4, 2), "car", 0.7),
    ]
    return dets, gts


def test_ap_hand_case():
    dets, gts = _scene_two_gt()
    expected = ap40_envelope([True, False, True], 2)
    assert expected == Fraction(5, 6)
    assert average_precision_40(dets, gts) == pytest.approx(5 / 6, abs=1e-12)


def test_ap_trivial_cases():
    _, gts = _scene_two_gt()
    perfect = [Detection(g.box, "car", 0.5) for g in gts]
    assert average_precision_40(perfect, gts) == 1.0
    assert average_precision_40([], gts) == 0.0
    with pytest.raises(DomainError):
        average_precision_40(perfect, [])


def test_ap_random_flags_against_envelope():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n_gt = int(rng.integers(1, 8))
        hits = list(rng.random(int(rng.integers(0, 12))) < 0.5)
        # cap true positives at n_gt
        tp = 0
        for i, h in enumerate(hits):
            if h and tp >= n_gt:
                hits[i] = False
            tp += hits[i]
        got = ap_from_flags([1 if h else 0 for h in hits], n_gt)
        assert got == pytest.approx(float(ap40_envelope(hits, n_gt)), abs=1e-12)


def test_ap_monotone_score_transform_and_fp_removal():
    dets, gts = _scene_two_gt()
    squashed = [Detection(d.box, d.label, d.score**3) for d in dets]
    assert average_precision_40(squashed, gts) == average_precision_40(dets, gts)
    without_fp = [dets[0], dets[2]]
    assert average_precision_40(without_fp, gts) >= average_precision_40(dets, gts)


def test_match_prefers_higher_score_and_ignores():
    gts = [GroundTruth(BevBox(0, 10, 4, 2), "car")]
    dets = [Detection(BevBox(0, 10, 4, 2), "car", 0.3), Detection(BevBox(0, 10.1, 4, 2), "car", 0.6)]
    order, flags = match_detections(dets, gts, rotated_iou_bev, 0.7)
    assert order == [1, 0] and flags == [1, 0]
    _, flags = match_detections(dets, gts, rotated_iou_bev, 0.7, ignore=[True])
    assert flags == [-1, -1]


def test_ap_table_buckets_cumulative():
    gts = [GroundTruth(BevBox(0, 10, 4, 2), "car", 0), GroundTruth(BevBox(10, 30, 4, 2), "car", 2)]
    dets = [Detection(gts[0].box, "car", 0.9)]
    table = ap_table(dets, gts, rotated_iou_bev, {"car": 0.7})
    assert table[("car", "easy")] == 1.0
    assert table[("car", "moderate")] == 1.0
    assert table[("car", "hard")] == pytest.approx(float(ap40_envelope([True], 2)))


def test_records_round_trip(tmp_path):
    items = [
        Detection(Box3D(BevBox(0.1, 12.5, 3.9, 1.6, 0.3), 0.0, 1.56), "car", 0.75),
        GroundTruth(BevBox(1 / 3, 7.0, 0.8, 0.6, -1.0), "pedestrian", 2),
    ]
    path = tmp_path / "r.txt"
    write_records(path, items)
    dets, gts = read_records(path)
    assert dets == [items[0]] and gts == [items[1]]


def test_records_malformed():
    with pytest.raises(FormatError):
        parse_record("det car 0.5")
    with pytest.raises(FormatError):
        parse_record("det car x 0 0 0 1 1 0 nan nan")
