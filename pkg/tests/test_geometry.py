import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tileforge.geometry import Box, area, enclosing, intersect, intersection_area, ios, iou, is_small

from oracles import raster_ios, raster_iou


def test_area_examples():
    assert area(Box(0, 0, 10, 10)) == 100
    assert area(Box(5, 5, 5, 9)) == 0
    assert area(Box(0, 0, 31, 31)) == 961


def test_intersect_examples():
    assert intersect(Box(0, 0, 10, 10), Box(5, 5, 15, 15)) == Box(5, 5, 10, 10)
    assert intersect(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) is None
    assert intersect(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == Box(0, 0, 10, 10)
    # touching edges share no area
    assert intersect(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) is None


def test_iou_examples():
    a = Box(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, Box(20, 0, 30, 10)) == 0.0
    b = Box(5, 5, 15, 15)
    assert iou(a, b) == pytest.approx(25 / 175, abs=1e-12)
    assert iou(a, b) == pytest.approx(raster_iou(a.as_tuple(), b.as_tuple(), 16), abs=1e-12)


def test_iou_zero_area_convention():
    z = Box(3, 3, 3, 3)
    assert iou(z, z) == 0.0
    assert ios(z, Box(0, 0, 10, 10)) == 0.0


def test_ios_examples():
    assert ios(Box(0, 0, 10, 10), Box(0, 0, 20, 20)) == 1.0
    assert ios(Box(0, 0, 10, 10), Box(30, 30, 40, 40)) == 0.0
    c, r = Box(0, 0, 10, 10), Box(5, 0, 15, 10)
    assert ios(c, r) == 0.5
    assert raster_ios(c.as_tuple(), r.as_tuple(), 16) == 0.5
    # self is the first argument
    assert ios(Box(0, 0, 20, 20), Box(0, 0, 10, 10)) == 0.25


def test_is_small_examples():
    assert is_small(Box(0, 0, 31, 31))
    assert not is_small(Box(0, 0, 32, 32))
    assert is_small(Box(0, 0, 0, 0))
    # the area reading: a 40x20 box (800 px^2) is small although one side exceeds 32
    assert is_small(Box(0, 0, 40, 20))


@pytest.mark.parametrize("coords", [(1, 0, 0, 1), (0, 1, 1, 0), (math.nan, 0, 1, 1), (0, 0, math.inf, 1)])
def test_box_rejects_invalid(coords):
    with pytest.raises(ValueError):
        Box(*coords)


def test_box_helpers():
    b = Box.from_xywh(10, 20, 40, 40)
    assert b == Box(10, 20, 50, 60)
    assert b.to_xywh() == (10, 20, 40, 40)
    assert b.translate(-10, -20) == Box(0, 0, 40, 40)
    assert b.scale(0.5, 2) == Box(5, 40, 25, 120)
    assert Box(-5, -5, 5, 50).clip(10, 20) == Box(0, 0, 5, 20)
    assert Box(20, 20, 30, 30).clip(10, 10).area == 0
    assert enclosing([Box(0, 0, 1, 1), Box(5, -1, 6, 2)]) == Box(0, -1, 6, 2)
    with pytest.raises(ValueError):
        enclosing([])


coord = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, min_side=0.0):
    x, y = draw(coord), draw(coord)
    w = draw(st.floats(min_value=min_side, max_value=500))
    h = draw(st.floats(min_value=min_side, max_value=500))
    return Box(x, y, x + w, y + h)


@given(boxes(), boxes())
def test_metric_invariants(a, b):
    assert iou(a, b) == iou(b, a)
    for v in (iou(a, b), ios(a, b), ios(b, a)):
        assert 0.0 <= v <= 1.0
    if a.area > 0:
        assert iou(a, b) <= ios(a, b) + 1e-12
    # one-directional: a subnormal overlap over a normal union underflows to 0
    if intersection_area(a, b) == 0.0:
        assert iou(a, b) == 0.0
    if iou(a, b) > 0.0:
        assert intersection_area(a, b) > 0.0


@given(boxes(min_side=1.0))
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes(min_side=1.0), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_ios_containment_is_one(outer, fx1, fy1, fx2, fy2):
    x1 = outer.x1 + fx1 * outer.width
    x2 = x1 + fx2 * (outer.x2 - x1)
    y1 = outer.y1 + fy1 * outer.height
    y2 = y1 + fy2 * (outer.y2 - y1)
    inner = Box(x1, y1, x2, y2)
    if inner.area > 0 and intersect(inner, outer) == inner:
        assert ios(inner, outer) == pytest.approx(1.0, abs=1e-12)


def random_grid_box(rng, extent=64):
    # coordinates on the 0.1 grid rasterise exactly at 10x resolution
    x1, x2 = sorted(rng.integers(0, extent * 10, size=2) / 10)
    y1, y2 = sorted(rng.integers(0, extent * 10, size=2) / 10)
    return Box(x1, y1, x2, y2)


def test_raster_monte_carlo_subset():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = random_grid_box(rng), random_grid_box(rng)
        assert abs(iou(a, b) - raster_iou(a.as_tuple(), b.as_tuple(), 64)) <= 1e-3
        assert abs(ios(a, b) - raster_ios(a.as_tuple(), b.as_tuple(), 64)) <= 1e-3
