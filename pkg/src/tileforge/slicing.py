"""Slice grids for inference and dataset slicing for training."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Box, intersect
from .scene import SceneRecord


@dataclass(frozen=True)
class SliceParams:
    slice_w: int
    slice_h: int
    overlap_ratio: float = 0.2
    overlap_ratio_w: Optional[float] = None
    overlap_ratio_h: Optional[float] = None

    def __post_init__(self):
        if self.slice_w < 1 or self.slice_h < 1:
            raise ValueError(f"slice size must be positive, got {self.slice_w}x{self.slice_h}")
        for r in (self.overlap_ratio, self.overlap_ratio_w, self.overlap_ratio_h):
            if r is not None and not 0.0 <= r < 1.0:
                raise ValueError(f"overlap ratio must lie in [0, 1), got {r}")
        if self.stride_x < 1 or self.stride_y < 1:
            raise ValueError(
                f"overlap too close to 1 for slice {self.slice_w}x{self.slice_h}: stride would be 0"
            )

    @property
    def stride_x(self) -> int:
        r = self.overlap_ratio if self.overlap_ratio_w is None else self.overlap_ratio_w
        return _stride(self.slice_w, r)

    @property
    def stride_y(self) -> int:
        r = self.overlap_ratio if self.overlap_ratio_h is None else self.overlap_ratio_h
        return _stride(self.slice_h, r)


def _stride(extent: int, ratio: float) -> int:
    # round first so 640 * 0.8 style products don't floor to 511
    return math.floor(round(extent * (1.0 - ratio), 9))


@dataclass(frozen=True, slots=True, order=True)
class SliceWindow:
    offset_y: int
    offset_x: int
    height: int
    width: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.offset_x < 0 or self.offset_y < 0:
            raise ValueError(f"invalid slice window {self!r}")

    @classmethod
    def make(cls, offset_x: int, offset_y: int, width: int, height: int) -> "SliceWindow":
        return cls(offset_y=offset_y, offset_x=offset_x, height=height, width=width)

    @property
    def box(self) -> Box:
        return Box(self.offset_x, self.offset_y, self.offset_x + self.width, self.offset_y + self.height)

    def as_dict(self) -> dict:
        return {"offset_x": self.offset_x, "offset_y": self.offset_y, "width": self.width, "height": self.height}


@dataclass(frozen=True)
class SliceGrid:
    image_w: int
    image_h: int
    windows: tuple[SliceWindow, ...]

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


@dataclass(frozen=True, slots=True)
class SlicedAnnotation:
    box: Box
    class_id: int
    visible_fraction: float
    ignore: bool = False


@dataclass(frozen=True)
class SlicedScene:
    parent_id: str
    window: SliceWindow
    annotations: tuple[SlicedAnnotation, ...]

    @property
    def slice_id(self) -> str:
        w = self.window
        return f"{self.parent_id}__{w.offset_x}_{w.offset_y}_{w.width}_{w.height}"


def axis_offsets(extent: int, size: int, stride: int) -> list[int]:
    if size >= extent:
        return [0]
    offsets = []
    o = 0
    while o + size < extent:
        offsets.append(o)
        o += stride
    last = extent - size
    if not offsets or offsets[-1] != last:
        offsets.append(last)
    return offsets


def compute_grid(image_w: int, image_h: int, p: SliceParams) -> SliceGrid:
    if image_w < 1 or image_h < 1:
        raise ValueError(f"image size must be positive, got {image_w}x{image_h}")
    w = min(p.slice_w, image_w)
    h = min(p.slice_h, image_h)
    xs = axis_offsets(image_w, w, p.stride_x)
    ys = axis_offsets(image_h, h, p.stride_y)
    windows = tuple(SliceWindow.make(x, y, w, h) for y in ys for x in xs)
    return SliceGrid(image_w, image_h, windows)


def remap_to_local(box: Box, w: SliceWindow) -> Box:
    return box.translate(-w.offset_x, -w.offset_y)


def remap_to_global(box: Box, w: SliceWindow) -> Box:
    return box.translate(w.offset_x, w.offset_y)


def _clip_annotations(scene, window, min_visible_fraction, scale_filter_max_area):
    kept = []
    frame = window.box
    for a in scene.annotations:
        if scale_filter_max_area is not None and a.box.area > scale_filter_max_area:
            continue
        clipped = intersect(a.box, frame)
        if clipped is None:
            continue
        frac = clipped.area / a.box.area
        if frac < min_visible_fraction:
            continue
        local = remap_to_local(clipped, window)
        # rounding in the translation must not push the box past the window frame
        local = local.clip(window.width, window.height)
        kept.append(SlicedAnnotation(local, a.class_id, min(frac, 1.0), a.ignore))
    return tuple(kept)


def _check_fraction(min_visible_fraction):
    if not 0.0 < min_visible_fraction <= 1.0:
        raise ValueError(f"min_visible_fraction must lie in (0, 1], got {min_visible_fraction}")


def slice_dataset(
    scene: SceneRecord,
    p: SliceParams,
    min_visible_fraction: float = 0.5,
    scale_filter_max_area: Optional[float] = None,
) -> list[SlicedScene]:
    """Cut one scene into training slices with clipped, remapped labels.

    A ground-truth box survives in a slice when at least ``min_visible_fraction``
    of its area is inside the window. With ``scale_filter_max_area`` set, boxes
    larger than that are left to the full-image pass and appear in no slice.
    """
    _check_fraction(min_visible_fraction)
    grid = compute_grid(scene.width, scene.height, p)
    return [
        SlicedScene(scene.scene_id, w, _clip_annotations(scene, w, min_visible_fraction, scale_filter_max_area))
        for w in grid
    ]


def random_anchor_crop(
    scene: SceneRecord,
    crop_w: int,
    crop_h: int,
    rng_seed: int,
    min_visible_fraction: float = 0.5,
    scale_filter_max_area: Optional[float] = None,
) -> SlicedScene:
    """Crop around one randomly chosen annotation.

    The anchor is drawn uniformly over boxes, then the crop offset uniformly
    over integer positions that keep the anchor fully inside the crop.
    """
    _check_fraction(min_visible_fraction)
    if crop_w < 1 or crop_h < 1 or crop_w > scene.width or crop_h > scene.height:
        raise ValueError(f"crop {crop_w}x{crop_h} does not fit image {scene.width}x{scene.height}")
    candidates = [a for a in scene.annotations if not a.ignore]
    if not candidates:
        raise ValueError(f"scene {scene.scene_id!r} has no annotations to anchor on")
    rng = np.random.default_rng(rng_seed)
    anchor = candidates[int(rng.integers(len(candidates)))].box
    ox = _anchor_offset(anchor.x1, anchor.x2, crop_w, scene.width, rng)
    oy = _anchor_offset(anchor.y1, anchor.y2, crop_h, scene.height, rng)
    if ox is None or oy is None:
        raise ValueError(f"anchor box {anchor} cannot fit inside a {crop_w}x{crop_h} crop")
    window = SliceWindow.make(ox, oy, crop_w, crop_h)
    return SlicedScene(
        scene.scene_id, window, _clip_annotations(scene, window, min_visible_fraction, scale_filter_max_area)
    )


def _anchor_offset(lo_edge, hi_edge, crop, extent, rng):
    lo = max(math.ceil(hi_edge - crop), 0)
    hi = min(math.floor(lo_edge), extent - crop)
    if lo > hi:
        return None
    return int(rng.integers(lo, hi + 1))
