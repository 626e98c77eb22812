import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tileforge.geometry import Box, intersect
from tileforge.scene import Annotation, SceneRecord
from tileforge.slicing import (
    SliceParams, SliceWindow, compute_grid, random_anchor_crop, remap_to_global, remap_to_local, slice_dataset,
)

from oracles import coverage_count


def windows(grid):
    return [(w.offset_x, w.offset_y, w.width, w.height) for w in grid]


def test_grid_1920x1080_example():
    g = compute_grid(1920, 1080, SliceParams(640, 640, 0.2))
    assert SliceParams(640, 640, 0.2).stride_x == 512
    xs = sorted({w.offset_x for w in g})
    ys = sorted({w.offset_y for w in g})
    assert xs == [0, 512, 1024, 1280]
    assert ys == [0, 440]
    assert len(g) == 8
    assert (coverage_count(1920, 1080, windows(g)) >= 1).all()


def test_grid_slice_equals_image():
    for ov in (0.0, 0.2, 0.5, 0.9):
        assert windows(compute_grid(640, 640, SliceParams(640, 640, ov))) == [(0, 0, 640, 640)]


def test_grid_image_smaller_than_slice_shrinks():
    g = compute_grid(500, 500, SliceParams(640, 640, 0.2))
    assert windows(g) == [(0, 0, 500, 500)]
    assert (coverage_count(500, 500, windows(g)) == 1).all()


def test_grid_row_major_order():
    g = compute_grid(1920, 1080, SliceParams(640, 640, 0.2))
    keys = [(w.offset_y, w.offset_x) for w in g]
    assert keys == sorted(keys)
    assert list(g.windows) == sorted(g.windows)


def test_stride_rounding_and_rejection():
    assert SliceParams(640, 640, 0.2).stride_y == 512
    assert SliceParams(100, 100, 0.1).stride_x == 90
    p = SliceParams(100, 50, 0.2, overlap_ratio_w=0.5)
    assert (p.stride_x, p.stride_y) == (50, 40)
    with pytest.raises(ValueError):
        SliceParams(10, 10, 0.95)  # stride floor(0.5) = 0
    with pytest.raises(ValueError):
        SliceParams(640, 640, 1.0)
    with pytest.raises(ValueError):
        SliceParams(0, 640)
    with pytest.raises(ValueError):
        compute_grid(0, 10, SliceParams(5, 5))


def test_exhaustive_coverage_small_images():
    # every image size on a coarse lattice up to 256 x 256, full slice/overlap cross product
    sizes = list(range(1, 257, 17)) + [63, 64, 65, 99, 100, 101, 127, 128, 129, 256]
    for slice_ in (64, 100, 128):
        for ov in (0.0, 0.1, 0.2, 0.5):
            p = SliceParams(slice_, slice_, ov)
            for w in sizes:
                for h in sizes:
                    g = compute_grid(w, h, p)
                    cov = coverage_count(w, h, windows(g))
                    assert cov.min() >= 1, (w, h, slice_, ov)
                    for win in g:
                        assert win.offset_x + win.width <= w and win.offset_y + win.height <= h
                    assert len(set(windows(g))) == len(g)


@given(st.integers(1, 300), st.integers(1, 300), st.integers(4, 128), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75]))
@settings(max_examples=150, deadline=None)
def test_overlap_between_regular_neighbours(w, h, s, ov):
    p = SliceParams(s, s, ov)
    g = compute_grid(w, h, p)
    xs = sorted({win.offset_x for win in g})
    width = min(s, w)
    for a, b in zip(xs, xs[1:]):
        shared = a + width - b
        assert shared >= 0  # coverage: no gaps
        if b - a == p.stride_x:  # not the edge-anchored window
            assert shared >= math.floor(s * ov) - 1


def test_remap_examples():
    w = SliceWindow.make(512, 440, 640, 640)
    b = Box(522, 460, 562, 500)
    assert remap_to_local(b, w) == Box(10, 20, 50, 60)
    assert remap_to_global(Box(10, 20, 50, 60), w) == b
    z = SliceWindow.make(0, 0, 640, 640)
    assert remap_to_local(b, z) == b and remap_to_global(b, z) == b
    assert remap_to_global(remap_to_local(b, w), w) == b


dyadic = st.integers(-2 ** 20, 2 ** 20).map(lambda k: k / 1024)


@given(dyadic, dyadic, st.integers(0, 2 ** 10).map(lambda k: k / 1024), st.integers(0, 2 ** 10).map(lambda k: k / 1024),
       st.integers(0, 8000), st.integers(0, 8000))
def test_remap_roundtrip_exact(x, y, dw, dh, ox, oy):
    b = Box(x, y, x + dw, y + dh)
    w = SliceWindow.make(ox, oy, 640, 640)
    assert remap_to_global(remap_to_local(b, w), w) == b
    assert remap_to_local(remap_to_global(b, w), w) == b


def scene(*anns, w=1920, h=1080):
    return SceneRecord("s", w, h, tuple(Annotation(Box(*b), c) for b, c in anns))


def test_slice_dataset_examples():
    p = SliceParams(640, 640, 0.2)
    sl = slice_dataset(scene(((100, 100, 120, 120), 1)), p)
    assert len(sl) == 8
    first = sl[0]
    assert first.annotations[0].box == Box(100, 100, 120, 120)
    assert first.annotations[0].visible_fraction == 1.0
    # exactly half inside the only window containing any of it
    s = scene(((620, 100, 660, 120), 1), w=1280, h=640)
    sl = slice_dataset(s, SliceParams(640, 640, 0.0), min_visible_fraction=0.6)
    assert all(not x.annotations for x in sl)
    sl = slice_dataset(s, SliceParams(640, 640, 0.0), min_visible_fraction=0.5)
    assert [x.annotations[0].visible_fraction for x in sl] == [0.5, 0.5]
    assert sl[0].annotations[0].box == Box(620, 100, 640, 120)  # clipped geometry
    assert sl[1].annotations[0].box == Box(0, 100, 20, 120)
    # scale filter
    big = scene(((100, 100, 200, 150), 1))
    assert big.annotations[0].box.area == 5000
    assert all(not x.annotations for x in slice_dataset(big, p, scale_filter_max_area=4096))
    assert any(x.annotations for x in slice_dataset(big, p, scale_filter_max_area=None))


def test_slice_dataset_rejects_bad_fraction():
    with pytest.raises(ValueError):
        slice_dataset(scene(), SliceParams(64, 64), min_visible_fraction=0.0)


def test_slice_dataset_labels_inside_window():
    rng = np.random.default_rng(5)
    anns = []
    for _ in range(60):
        x, y = rng.uniform(0, 1900), rng.uniform(0, 1060)
        anns.append(((x, y, min(x + rng.uniform(1, 80), 1920), min(y + rng.uniform(1, 80), 1080)), 1))
    for sc in slice_dataset(scene(*anns), SliceParams(640, 640, 0.2), 0.3):
        for a in sc.annotations:
            assert 0 <= a.box.x1 <= a.box.x2 <= sc.window.width
            assert 0 <= a.box.y1 <= a.box.y2 <= sc.window.height
            assert 0.3 <= a.visible_fraction <= 1.0


@given(st.integers(64, 400), st.integers(64, 400), st.sampled_from([32, 50, 64]),
       st.sampled_from([0.0, 0.2, 0.5]), st.data())
@settings(max_examples=120, deadline=None)
def test_conservation(w, h, s, ov, data):
    # fits in some window whenever the side is at most slice - stride (the guaranteed overlap)
    p = SliceParams(s, s, ov)
    limit_x = min(s, w) - p.stride_x if s < w else w
    limit_y = min(s, h) - p.stride_y if s < h else h
    if limit_x <= 0 or limit_y <= 0:
        return
    bw = data.draw(st.floats(0.5, limit_x))
    bh = data.draw(st.floats(0.5, limit_y))
    x = data.draw(st.floats(0, w - bw))
    y = data.draw(st.floats(0, h - bh))
    sc = scene(((x, y, x + bw, y + bh), 3), w=w, h=h)
    sl = slice_dataset(sc, p, min_visible_fraction=1.0)
    assert any(a.visible_fraction == 1.0 for x_ in sl for a in x_.annotations)


def test_stated_sufficient_condition_counterexample():
    # a side below slice*(1-overlap) can still straddle every window boundary
    p = SliceParams(100, 100, 0.2)  # windows [0,100], [80,180], [160,260]
    assert 70 < 100 * (1 - 0.2)
    sc = scene(((70, 10, 140, 20), 1), w=260, h=100)
    assert not any(s.annotations for s in slice_dataset(sc, p, min_visible_fraction=1.0))
    # at most slice - stride = 20 px it always fits
    sc = scene(((79, 10, 99, 20), 1), w=260, h=100)
    assert any(s.annotations for s in slice_dataset(sc, p, min_visible_fraction=1.0))


def test_random_anchor_crop_examples():
    s = scene(((500, 300, 520, 320), 4))
    for seed in range(20):
        c = random_anchor_crop(s, 100, 100, seed)
        assert intersect(c.window.box, Box(500, 300, 520, 320)) == Box(500, 300, 520, 320)
        assert len(c.annotations) == 1 and c.annotations[0].visible_fraction == 1.0
    assert random_anchor_crop(s, 100, 100, 7) == random_anchor_crop(s, 100, 100, 7)
    with pytest.raises(ValueError):
        random_anchor_crop(scene(((0, 0, 200, 200), 1)), 100, 100, 0)
    with pytest.raises(ValueError):
        random_anchor_crop(scene(), 100, 100, 0)
    with pytest.raises(ValueError):
        random_anchor_crop(s, 4000, 100, 0)


def test_random_anchor_crop_near_border_is_clamped():
    s = scene(((1905, 1070, 1920, 1080), 1))
    for seed in range(10):
        c = random_anchor_crop(s, 64, 64, seed)
        assert c.window.offset_x + 64 <= 1920 and c.window.offset_y + 64 <= 1080
        assert c.annotations[0].visible_fraction == 1.0


def test_random_anchor_crop_anchor_is_box_uniform():
    # two boxes far apart: each should be the anchor about half the time
    s = scene(((10, 10, 20, 20), 1), ((1800, 1000, 1810, 1010), 2))
    hits = sum(random_anchor_crop(s, 100, 100, seed).annotations[0].class_id == 1 for seed in range(400))
    assert 160 < hits < 240
