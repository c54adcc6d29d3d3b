import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import raster_iou, raster_iou_bruteforce, random_pair, random_rect
from semgrasp.geometry import (
    GraspRect,
    angle_distance,
    decode_angle,
    encode_angle,
    is_match,
    jaccard,
    polygon_area,
    quad_to_rect,
    rect_to_polygon,
    wrap_angle,
)

rects = st.builds(
    GraspRect,
    x=st.floats(0, 480),
    y=st.floats(0, 480),
    theta=st.floats(-90, 89.999),
    w=st.floats(1, 200),
    h=st.floats(1, 200),
)


@pytest.mark.parametrize("theta, cls", [(0, 10), (-90, 1), (37, 14), (-85, 2), (85, 19), (89.99, 19)])
def test_encode_angle(theta, cls):
    assert encode_angle(theta) == cls


@pytest.mark.parametrize("theta", [90, 90.5, -90.01, 180, float("nan")])
def test_encode_angle_rejects_out_of_range(theta):
    with pytest.raises(ValueError):
        encode_angle(theta)


@pytest.mark.parametrize("cls, theta", [(10, 0.0), (1, -90.0), (19, 90.0)])
def test_decode_angle(cls, theta):
    assert decode_angle(cls) == theta


@pytest.mark.parametrize("cls", [0, 20, -1, 2.5, True])
def test_decode_angle_rejects(cls):
    with pytest.raises(ValueError):
        decode_angle(cls)


def test_angle_codec_half_away_from_zero():
    # (theta + 90) / 10 = 0.5 exactly -> rounds up to 1
    assert encode_angle(-85.0) == 2
    assert encode_angle(-75.0) == 3


def test_angle_codec_total_and_surjective():
    thetas = np.round(np.arange(-900, 900) * 0.1, 1)
    classes = {encode_angle(t) for t in thetas}
    assert classes == set(range(1, 20))


def test_grasprect_wraps_theta():
    assert GraspRect(0, 0, 90, 4, 2).theta == -90.0
    assert GraspRect(0, 0, 135, 4, 2).theta == pytest.approx(-45.0)
    assert GraspRect(0, 0, -90, 4, 2).theta == -90.0


@pytest.mark.parametrize("w, h", [(0, 1), (1, 0), (-1, 2)])
def test_grasprect_rejects_nonpositive_size(w, h):
    with pytest.raises(ValueError):
        GraspRect(0, 0, 0, w, h)


@given(st.floats(-1e4, 1e4))
def test_wrap_angle_range(t):
    w = wrap_angle(t)
    assert -90.0 <= w < 90.0
    assert angle_distance(w, t) < 1e-9


def test_rect_to_polygon_axis_aligned():
    poly = rect_to_polygon(GraspRect(2, 1, 0, 4, 2))
    np.testing.assert_allclose(poly, [[0, 0], [4, 0], [4, 2], [0, 2]], atol=1e-12)


def test_rect_to_polygon_quarter_turn():
    poly = rect_to_polygon(GraspRect(0, 0, 90, 4, 2))
    xs, ys = poly[:, 0], poly[:, 1]
    assert xs.max() - xs.min() == pytest.approx(2.0)
    assert ys.max() - ys.min() == pytest.approx(4.0)


@given(rects)
def test_rect_polygon_centroid_and_orientation(g):
    poly = rect_to_polygon(g)
    np.testing.assert_allclose(poly.mean(axis=0), [g.x, g.y], atol=1e-6)
    assert polygon_area(poly) == pytest.approx(g.w * g.h, rel=1e-9)


def test_quad_to_rect_axis_aligned():
    g = quad_to_rect([(0, 0), (4, 0), (4, 2), (0, 2)])
    assert g.as_dict() == pytest.approx({"x": 2, "y": 1, "theta": 0, "w": 4, "h": 2})


def test_quad_to_rect_rejects_degenerate():
    with pytest.raises(ValueError):
        quad_to_rect([(0, 0), (1, 0), (2, 0), (3, 0)])
    with pytest.raises(ValueError):
        quad_to_rect([(0, 0), (4, 0), (5, 2), (0, 2)])


def test_round_trip_1000_random_rects():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        g = random_rect(rng)
        back = quad_to_rect(rect_to_polygon(g))
        worst = max(
            worst,
            abs(back.x - g.x),
            abs(back.y - g.y),
            abs(back.w - g.w),
            abs(back.h - g.h),
            angle_distance(back.theta, g.theta),
        )
    print(f"max round-trip error over 1000 rects: {worst:.3e}")
    assert worst < 1e-6


def test_jaccard_identity_and_disjoint():
    g = GraspRect(100, 100, 30, 40, 20)
    assert jaccard(g, g) == pytest.approx(1.0, abs=1e-9)
    assert jaccard(g, GraspRect(300, 300, 30, 40, 20)) == 0.0


def test_jaccard_square_vs_rotated_square():
    a = GraspRect(0, 0, 0, 1, 1)
    b = GraspRect(0, 0, 45, 1, 1)
    inter = 2 * (math.sqrt(2) - 1)
    expected = inter / (2 - inter)
    assert jaccard(a, b) == pytest.approx(expected, abs=1e-12)
    assert abs(raster_iou(a, b) - expected) <= 2e-3


def test_row_counting_oracle_agrees_with_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(5):
        a, b = random_pair(rng)
        assert raster_iou(a, b, 512) == pytest.approx(raster_iou_bruteforce(a, b, 512), abs=1e-9)


@settings(max_examples=200)
@given(rects, rects)
def test_jaccard_symmetric_and_bounded(a, b):
    j = jaccard(a, b)
    assert 0.0 <= j <= 1.0
    assert j == pytest.approx(jaccard(b, a), abs=1e-9)


@settings(max_examples=200)
@given(rects, rects, st.floats(-200, 200), st.floats(-200, 200), st.floats(-180, 180))
def test_jaccard_rigid_motion_invariant(a, b, tx, ty, rot):
    t = math.radians(rot)
    c, s = math.cos(t), math.sin(t)

    def move(g):
        return GraspRect(c * g.x - s * g.y + tx, s * g.x + c * g.y + ty, g.theta + rot, g.w, g.h)

    assert jaccard(move(a), move(b)) == pytest.approx(jaccard(a, b), abs=1e-6)


def test_jaccard_matches_rasterization_sample():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = random_pair(rng)
        assert abs(jaccard(a, b) - raster_iou(a, b)) <= 2e-3


@pytest.mark.parametrize("t1, t2, d", [(0, 0, 0), (-85, 85, 10), (15, 60, 45), (0, 90, 90), (-90, 90, 0), (10, 370, 0)])
def test_angle_distance(t1, t2, d):
    assert angle_distance(t1, t2) == pytest.approx(d)


def test_is_match_cases():
    g = GraspRect(50, 50, 0, 40, 20)
    assert is_match(g, g)
    assert not is_match(GraspRect(50, 50, 31, 40, 20), g)
    assert is_match(GraspRect(50, 50, 30, 40, 20), g)


def test_is_match_across_wrap():
    a = GraspRect(100, 100, -85, 10, 10)
    b = GraspRect(100, 100, 85, 10, 10)
    assert angle_distance(a.theta, b.theta) == pytest.approx(10)
    assert raster_iou(a, b) > 0.25
    assert is_match(a, b)


def test_is_match_strict_iou_threshold():
    a = GraspRect(0, 0, 0, 10, 10)
    b = GraspRect(6, 0, 0, 10, 10)  # overlap 4x10, union 160 -> 0.25 exactly
    assert jaccard(a, b) == pytest.approx(0.25)
    assert not is_match(a, b, iou_min=0.25)
    assert is_match(a, b, iou_min=0.2499)


@pytest.mark.parametrize("iou_min, angle_max", [(0, 30), (1.1, 30), (0.25, 0), (0.25, 91)])
def test_is_match_rejects_bad_thresholds(iou_min, angle_max):
    g = GraspRect(0, 0, 0, 1, 1)
    with pytest.raises(ValueError):
        is_match(g, g, iou_min, angle_max)


@settings(max_examples=150)
@given(rects, rects, st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(1, 90), st.floats(1, 90))
def test_is_match_monotone(a, b, i1, i2, a1, a2):
    lo_iou, hi_iou = sorted((i1, i2))
    lo_ang, hi_ang = sorted((a1, a2))
    if is_match(a, b, hi_iou, lo_ang):
        assert is_match(a, b, lo_iou, hi_ang)


@given(rects)
def test_is_match_reflexive(g):
    assert is_match(g, g)
