"""Measurement geometry: contours, simplification, fits, measurements.

Expected values come from closed-form math (shoelace / Pick areas, exact
parametric ellipse samples) or from scipy quadrature-grade references
(ellipe for perimeters); pixel-level cases were hand-counted.
"""

import json
import math

import numpy as np
import pytest
from scipy.special import ellipe

from fetalbiometry.errors import FitError
from fetalbiometry.geometry import (
    BinaryMask,
    BiometryResult,
    EllipseFit,
    RotatedRect,
    contour_enclosed_area,
    convex_hull,
    ellipse_perimeter,
    find_contours,
    fit_ellipse,
    measure,
    min_area_rect,
    postprocess,
    rdp,
)
from fetalbiometry.labels import ClassLabel


def exact_perimeter(a, b):
    # complete elliptic integral of the second kind, scipy convention m = e^2
    a, b = max(a, b), min(a, b)
    return 4.0 * a * float(ellipe(1.0 - (b / a) ** 2))


def ellipse_mask(h, w, cx, cy, a, b, theta=0.0):
    yy, xx = np.mgrid[0:h, 0:w]
    ct, st = math.cos(theta), math.sin(theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    return ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0).astype(np.float64)


def capsule_mask(h, w, cx, cy, length, width, theta=0.0):
    yy, xx = np.mgrid[0:h, 0:w]
    ct, st = math.cos(theta), math.sin(theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    r = width / 2.0
    half = length / 2.0 - r
    d = np.hypot(np.maximum(np.abs(xr) - half, 0.0), yr)
    return (d <= r).astype(np.float64)


def ellipse_points(a, b, theta=0.0, cx=0.0, cy=0.0, n=24):
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    x = cx + a * np.cos(t) * math.cos(theta) - b * np.sin(t) * math.sin(theta)
    y = cy + a * np.cos(t) * math.sin(theta) + b * np.sin(t) * math.cos(theta)
    return np.column_stack([x, y])


def dist_to_polyline(points, poly):
    """Max over points of the distance to the nearest polyline segment."""
    worst = 0.0
    pts = np.asarray(points, float)
    poly = np.asarray(poly, float)
    best = np.full(len(pts), np.inf)
    for i in range(len(poly) - 1):
        p0, p1 = poly[i], poly[i + 1]
        seg = p1 - p0
        seg_sq = float(seg @ seg)
        rel = pts - p0
        if seg_sq == 0:
            d = np.hypot(rel[:, 0], rel[:, 1])
        else:
            t = np.clip((rel @ seg) / seg_sq, 0.0, 1.0)
            proj = p0 + t[:, None] * seg
            d = np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])
        best = np.minimum(best, d)
    return float(best.max())


# ---------------------------------------------------------------- postprocess

def test_postprocess_uniform_field_survives():
    mask = postprocess(np.full((32, 32), 0.7), 32)
    assert mask.data.shape == (32, 32)
    assert mask.data.min() == 1  # interior unaffected by the opening


def test_postprocess_isolated_pixel_removed():
    prob = np.zeros((32, 32))
    prob[16, 16] = 1.0
    mask = postprocess(prob, 32)
    assert mask.data.sum() == 0


def test_postprocess_below_threshold_is_empty():
    mask = postprocess(np.full((16, 16), 0.55), 16)
    assert mask.data.sum() == 0


def test_postprocess_disk_area_within_2pct():
    r = 30
    prob = ellipse_mask(100, 100, 50, 50, r, r) * 0.9
    mask = postprocess(prob, 100)
    area = mask.data.sum()
    assert abs(area - math.pi * r * r) / (math.pi * r * r) < 0.02


def test_postprocess_resizes_and_binarizes():
    prob = ellipse_mask(64, 64, 32, 32, 20, 20) * 0.8
    mask = postprocess(prob, 128, pixel_spacing=0.5)
    assert mask.data.shape == (128, 128)
    assert set(np.unique(mask.data)) <= {0, 1}
    assert mask.pixel_spacing == 0.5


def test_postprocess_idempotent_on_large_convex_shape():
    prob = ellipse_mask(100, 100, 50, 50, 30, 30) * 0.9
    once = postprocess(prob, 100)
    twice = postprocess(once.data.astype(np.float64), 100)
    assert np.array_equal(once.data, twice.data)


# --------------------------------------------------------------- find_contours

def test_block_contour_encloses_16_pixels():
    m = np.zeros((10, 10), dtype=np.uint8)
    m[3:7, 2:6] = 1
    contours = find_contours(m)
    assert len(contours) == 1
    assert contour_enclosed_area(contours[0]) == pytest.approx(16.0)


def test_two_blocks_ordered_largest_first():
    m = np.zeros((20, 20), dtype=np.uint8)
    m[2:5, 2:5] = 1  # 9 px
    m[8:14, 8:14] = 1  # 36 px
    contours = find_contours(m)
    assert len(contours) == 2
    assert contour_enclosed_area(contours[0]) > contour_enclosed_area(contours[1])
    assert contour_enclosed_area(contours[0]) == pytest.approx(36.0)


def test_disk_contour_area_within_3pct():
    r = 25
    m = ellipse_mask(80, 80, 40, 40, r, r).astype(np.uint8)
    contours = find_contours(m)
    assert len(contours) == 1
    area = contour_enclosed_area(contours[0])
    assert abs(area - math.pi * r * r) / (math.pi * r * r) < 0.03


def test_empty_mask_no_contours():
    assert find_contours(np.zeros((8, 8), dtype=np.uint8)) == []


def test_single_pixel_contour():
    m = np.zeros((5, 5), dtype=np.uint8)
    m[2, 3] = 1
    contours = find_contours(m)
    assert len(contours) == 1
    assert np.array_equal(contours[0], [[3.0, 2.0]])


def test_contour_points_are_adjacent():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.uniform(8, 25)
        b = a / rng.uniform(1.0, 2.5)
        m = ellipse_mask(70, 70, 35, 35, a, b, rng.uniform(0, math.pi)).astype(np.uint8)
        (contour,) = find_contours(m)
        closed = np.vstack([contour, contour[:1]])
        steps = np.abs(np.diff(closed, axis=0))
        assert steps.max() <= 1  # 8-connected chain, including the closing edge


# ------------------------------------------------------------------------ rdp

def test_rdp_collinear_collapses_to_endpoints():
    pts = [(0, 0), (1, 0), (2, 0), (3, 0)]
    out = rdp(pts, 0.01)
    assert np.array_equal(out, [[0, 0], [3, 0]])


def test_rdp_hand_case_keep_and_drop():
    pts = [(0, 0), (2, 1), (4, 0)]  # middle point is 1.0 off the chord
    assert len(rdp(pts, 2.0)) == 2
    assert len(rdp(pts, 0.5)) == 3


def test_rdp_tiny_epsilon_is_identity():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 2)).cumsum(axis=0)
    out = rdp(pts, 1e-12)
    assert np.array_equal(out, pts)


def test_rdp_short_inputs_unchanged():
    assert np.array_equal(rdp([(1, 2), (3, 4)], 5.0), [[1, 2], [3, 4]])


def test_rdp_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        rdp([(0, 0), (1, 1), (2, 2)], 0.0)


def test_rdp_containment_random_polylines():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = rng.integers(5, 120)
        pts = rng.normal(scale=10.0, size=(n, 2)).cumsum(axis=0)
        eps = rng.uniform(0.05, 8.0)
        out = rdp(pts, eps)
        assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
        assert dist_to_polyline(pts, out) <= eps + 1e-9


def test_rdp_containment_traced_contours():
    rng = np.random.default_rng(43)
    for _ in range(15):
        a = rng.uniform(10, 30)
        b = a / rng.uniform(1.0, 3.0)
        m = ellipse_mask(90, 90, 45, 45, a, b, rng.uniform(0, math.pi)).astype(np.uint8)
        (contour,) = find_contours(m)
        eps = rng.uniform(0.3, 3.0)
        out = rdp(contour, eps)
        assert dist_to_polyline(contour, out) <= eps + 1e-9


# ---------------------------------------------------------------- fit_ellipse

def test_fit_circle_exact_recovery():
    pts = ellipse_points(50, 50, cx=100, cy=100, n=12)
    fit = fit_ellipse(pts)
    assert fit.a == pytest.approx(50.0, abs=1e-6)
    assert fit.b == pytest.approx(50.0, abs=1e-6)
    assert fit.cx == pytest.approx(100.0, abs=1e-6)
    assert fit.cy == pytest.approx(100.0, abs=1e-6)


def test_fit_axis_aligned_ellipse():
    fit = fit_ellipse(ellipse_points(60, 40, n=20))
    assert fit.a == pytest.approx(60.0, abs=1e-8)
    assert fit.b == pytest.approx(40.0, abs=1e-8)
    assert min(fit.theta, math.pi - fit.theta) < 1e-8


def test_fit_rotation_equivariance():
    fit = fit_ellipse(ellipse_points(60, 40, theta=math.pi / 6, n=20))
    assert fit.a == pytest.approx(60.0, abs=1e-8)
    assert fit.b == pytest.approx(40.0, abs=1e-8)
    assert fit.theta == pytest.approx(math.pi / 6, abs=1e-8)


def test_fit_random_ellipses_recovered():
    rng = np.random.default_rng(7)
    for _ in range(30):
        a = rng.uniform(5, 120)
        b = a / rng.uniform(1.0, 4.0)
        th = rng.uniform(0, math.pi)
        cx, cy = rng.uniform(-200, 200, size=2)
        fit = fit_ellipse(ellipse_points(a, b, th, cx, cy, n=int(rng.integers(8, 60))))
        assert fit.a == pytest.approx(a, rel=1e-6)
        assert fit.b == pytest.approx(b, rel=1e-6)
        assert fit.cx == pytest.approx(cx, abs=1e-5)
        assert fit.cy == pytest.approx(cy, abs=1e-5)
        if a / b > 1.001:
            dt = abs(fit.theta - th)
            assert min(dt, math.pi - dt) < 1e-5


def test_fit_rejects_degenerate_inputs():
    with pytest.raises(FitError):
        fit_ellipse([(0, 0), (1, 1), (2, 2), (3, 3)])  # < 5 points
    with pytest.raises(FitError):
        fit_ellipse([(i, 2 * i) for i in range(10)])  # collinear


def test_ellipse_fit_invariants_enforced():
    with pytest.raises(ValueError):
        EllipseFit(cx=0, cy=0, a=3, b=5, theta=0.1)
    with pytest.raises(ValueError):
        EllipseFit(cx=0, cy=0, a=5, b=3, theta=4.0)


# ----------------------------------------------------------- ellipse_perimeter

def test_perimeter_circle_exact():
    assert ellipse_perimeter(50, 50) == pytest.approx(100 * math.pi, rel=1e-12)


def test_perimeter_closed_form_60_40():
    expected = math.pi * (300.0 - math.sqrt(220.0 * 180.0))
    assert ellipse_perimeter(60, 40) == pytest.approx(expected, rel=1e-12)
    assert abs(ellipse_perimeter(60, 40) - exact_perimeter(60, 40)) / exact_perimeter(60, 40) < 2e-4


def test_perimeter_symmetry():
    assert ellipse_perimeter(60, 40) == ellipse_perimeter(40, 60)


def test_perimeter_matches_quadrature_up_to_aspect_4():
    rng = np.random.default_rng(3)
    for _ in range(40):
        a = rng.uniform(1.0, 100.0)
        b = a / rng.uniform(1.0, 4.0)
        ram = ellipse_perimeter(a, b)
        ref = exact_perimeter(a, b)
        assert abs(ram - ref) / ref < 5e-4, (a, b)


def test_perimeter_rejects_nonpositive_axes():
    with pytest.raises(ValueError):
        ellipse_perimeter(0.0, 1.0)


# -------------------------------------------------------------- min_area_rect

def test_rect_axis_aligned():
    corners = [(0, 0), (80, 0), (80, 20), (0, 20), (40, 10), (13, 7)]
    rect = min_area_rect(corners)
    assert rect.long == pytest.approx(80.0)
    assert rect.short == pytest.approx(20.0)
    assert min(rect.angle, math.pi - rect.angle) < 1e-9
    assert (rect.cx, rect.cy) == (pytest.approx(40.0), pytest.approx(10.0))


def test_rect_rotated_15_degrees():
    th = math.radians(15)
    ct, st = math.cos(th), math.sin(th)
    corners = []
    for x, y in [(0, 0), (80, 0), (80, 20), (0, 20)]:
        corners.append((round(x * ct - y * st), round(x * st + y * ct)))
    rect = min_area_rect(corners)
    assert abs(rect.long - 80.0) <= 0.5
    assert abs(rect.angle - th) < math.radians(1.5)


def test_rect_point_pair():
    rect = min_area_rect([(1.0, 2.0), (4.0, 6.0)])
    assert rect.long == pytest.approx(5.0)
    assert rect.short == 0.0
    assert rect.angle == pytest.approx(math.atan2(4, 3))


def test_rect_single_point():
    rect = min_area_rect([(3.0, 3.0), (3.0, 3.0)])
    assert rect.long == 0.0 and rect.short == 0.0


def test_rect_random_rotations_recover_dimensions():
    rng = np.random.default_rng(9)
    base = np.array([(0, 0), (60, 0), (60, 25), (0, 25)], dtype=float)
    for _ in range(25):
        th = rng.uniform(0, math.pi)
        ct, st = math.cos(th), math.sin(th)
        R = np.array([[ct, -st], [st, ct]])
        shift = rng.uniform(-50, 50, size=2)
        pts = base @ R.T + shift
        rect = min_area_rect(pts)
        assert rect.long == pytest.approx(60.0, abs=1e-8)
        assert rect.short == pytest.approx(25.0, abs=1e-8)
        dt = abs(rect.angle - th)
        assert min(dt, math.pi - dt) < 1e-8


def test_rect_invariant_enforced():
    with pytest.raises(ValueError):
        RotatedRect(cx=0, cy=0, long=1.0, short=2.0, angle=0.0)


def test_convex_hull_is_convex_and_contains_points():
    rng = np.random.default_rng(21)
    pts = rng.normal(size=(80, 2)) * 10
    hull = convex_hull(pts)
    n = len(hull)
    for i in range(n):  # CCW turn at every vertex
        o, u, v = hull[i], hull[(i + 1) % n], hull[(i + 2) % n]
        cross = (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
        assert cross > 0


# -------------------------------------------------------------------- measure

def test_measure_head_circle():
    m = ellipse_mask(140, 140, 70, 70, 50, 50).astype(np.uint8)
    res = measure(ClassLabel.HEAD, BinaryMask(m, pixel_spacing=0.2))
    target = 2 * math.pi * 50 * 0.2
    assert res.hc_mm == pytest.approx(target, rel=0.01)
    assert res.bpd_mm == pytest.approx(20.0, rel=0.01)
    assert res.ac_mm is None and res.fl_mm is None and res.reason is None


def test_measure_abdomen_sets_only_ac():
    m = ellipse_mask(120, 120, 60, 60, 45, 35, 0.4).astype(np.uint8)
    res = measure(ClassLabel.ABDOMEN, BinaryMask(m, pixel_spacing=0.3))
    assert res.ac_mm == pytest.approx(exact_perimeter(45, 35) * 0.3, rel=0.01)
    assert res.hc_mm is None and res.bpd_mm is None and res.fl_mm is None


def test_measure_femur_capsule():
    m = capsule_mask(120, 120, 60, 60, 80, 10).astype(np.uint8)
    res = measure(ClassLabel.FEMUR, BinaryMask(m, pixel_spacing=0.25))
    assert abs(res.fl_mm - 20.0) <= 0.25  # one pixel at this spacing


def test_measure_background_empty_result():
    m = ellipse_mask(64, 64, 32, 32, 20, 20).astype(np.uint8)
    res = measure(ClassLabel.BACKGROUND, BinaryMask(m, pixel_spacing=0.2))
    assert res == BiometryResult(label=ClassLabel.BACKGROUND)


def test_measure_empty_mask_gives_reason():
    res = measure(ClassLabel.HEAD, BinaryMask(np.zeros((32, 32), dtype=np.uint8), 0.2))
    assert res.hc_mm is None and res.reason == "empty_mask"


def test_measure_uses_largest_component():
    m = ellipse_mask(160, 160, 80, 80, 40, 40).astype(np.uint8)
    m[:10, :10] = 1  # small noise blob far away
    res = measure(ClassLabel.HEAD, BinaryMask(m, pixel_spacing=0.1))
    assert res.hc_mm == pytest.approx(2 * math.pi * 40 * 0.1, rel=0.01)


def test_measure_scale_equivariance():
    rng = np.random.default_rng(17)
    for _ in range(5):
        a = rng.uniform(25, 40)
        b = a / rng.uniform(1.0, 2.0)
        th = rng.uniform(0, math.pi)
        small = ellipse_mask(120, 120, 60, 60, a, b, th).astype(np.uint8)
        big = ellipse_mask(240, 240, 120, 120, 2 * a, 2 * b, th).astype(np.uint8)
        r1 = measure(ClassLabel.HEAD, BinaryMask(small, pixel_spacing=0.2))
        r2 = measure(ClassLabel.HEAD, BinaryMask(big, pixel_spacing=0.1))
        assert r2.hc_mm == pytest.approx(r1.hc_mm, rel=0.01)
        assert r2.bpd_mm == pytest.approx(r1.bpd_mm, rel=0.01)


def test_measure_rotation_invariance():
    base = None
    for th in (0.0, 0.3, 0.9, 1.4, 2.2):
        m = ellipse_mask(160, 160, 80, 80, 50, 30, th).astype(np.uint8)
        res = measure(ClassLabel.HEAD, BinaryMask(m, pixel_spacing=0.2))
        if base is None:
            base = res
        else:
            assert res.hc_mm == pytest.approx(base.hc_mm, rel=0.02)
            assert res.bpd_mm == pytest.approx(base.bpd_mm, rel=0.02)


def test_biometry_result_json_round_trip():
    res = BiometryResult(label=ClassLabel.HEAD, hc_mm=62.8, bpd_mm=20.0)
    d = res.to_json_dict(frame_id=3)
    blob = json.loads(json.dumps(d))
    assert blob["frame_id"] == 3
    assert blob["label"] == "head"
    assert blob["hc_mm"] == 62.8
    assert blob["ac_mm"] is None  # absent measurements are explicit nulls
    assert blob["reason"] is None


def test_binary_mask_rejects_bad_spacing():
    with pytest.raises(ValueError):
        BinaryMask(np.zeros((4, 4), dtype=np.uint8), pixel_spacing=0.0)
