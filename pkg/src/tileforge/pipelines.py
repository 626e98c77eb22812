"""End-to-end inference pipelines: full image, sliced, sliced+full, cascaded zoom-in."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .detect import Detection, DetectorConfig, DetectorError, call_detector, full_window, map_detections
from .fusion import MergeParams, merge, sort_detections
from .geometry import Box, enclosing, is_small
from .scene import CUT_CLASS_ID, Annotation, SceneRecord
from .slicing import SliceGrid, SliceParams, SliceWindow, compute_grid
from .timing import NullTimer, StageTimer

log = logging.getLogger(__name__)

PIPELINES = ("full", "sliced", "sliced+full", "cascade")


@dataclass(frozen=True)
class CascadeParams:
    cut_class_id: int = CUT_CLASS_ID
    min_cut_area: float = 0.0
    crop_pad_frac: float = 0.1
    detector_cfg: DetectorConfig = field(default_factory=DetectorConfig)
    second_pass_detector_cfg: DetectorConfig = field(default_factory=DetectorConfig)
    merge: MergeParams = field(default_factory=MergeParams)

    def __post_init__(self):
        if self.crop_pad_frac < 0 or self.min_cut_area < 0:
            raise ValueError("crop_pad_frac and min_cut_area must be non-negative")


def _region(detector, scene, window, cfg, timer, on_error, errors):
    try:
        with timer.stage("detection"):
            raw = call_detector(detector, scene, window, cfg)
    except DetectorError as exc:
        if on_error == "abort":
            raise
        log.warning("skipping region after detector error: %s", exc)
        if errors is not None:
            errors.append(str(exc))
        return []
    with timer.stage("remap"):
        return map_detections(raw, window, cfg)


def sliced_inference(
    scene: SceneRecord,
    grid: SliceGrid,
    detector,
    cfg: DetectorConfig,
    include_full_image: bool,
    p: MergeParams,
    slice_max_area: Optional[float] = None,
    full_min_area: Optional[float] = None,
    *,
    timer: Optional[StageTimer] = None,
    on_error: str = "skip",
    errors: Optional[list] = None,
) -> list[Detection]:
    """Detect on every grid window (and optionally the whole image), then merge.

    ``slice_max_area`` drops slice detections larger than it and
    ``full_min_area`` drops full-image detections smaller than it, so each pass
    only answers for the object scales it sees well.
    """
    if (grid.image_w, grid.image_h) != (scene.width, scene.height):
        raise ValueError(
            f"grid is for {grid.image_w}x{grid.image_h}, scene {scene.scene_id!r} is {scene.width}x{scene.height}"
        )
    timer = timer or NullTimer()
    pooled: list[Detection] = []
    for w in grid:
        dets = _region(detector, scene, w, cfg, timer, on_error, errors)
        if slice_max_area is not None:
            dets = [d for d in dets if d.box.area <= slice_max_area]
        pooled.extend(dets)
    if include_full_image:
        dets = _region(detector, scene, full_window(scene), cfg, timer, on_error, errors)
        if full_min_area is not None:
            dets = [d for d in dets if d.box.area >= full_min_area]
        pooled.extend(dets)
    with timer.stage("merge"):
        return merge(pooled, p)


def full_inference(scene, detector, cfg, p, *, timer=None, on_error="skip", errors=None) -> list[Detection]:
    timer = timer or NullTimer()
    dets = _region(detector, scene, full_window(scene), cfg, timer, on_error, errors)
    with timer.stage("merge"):
        return merge(dets, p)


def crop_window(box: Box, pad_frac: float, image_w: int, image_h: int) -> Optional[SliceWindow]:
    """Integer window around ``box`` padded by ``pad_frac`` of its size per side."""
    px, py = box.width * pad_frac, box.height * pad_frac
    x1 = max(0, math.floor(box.x1 - px))
    y1 = max(0, math.floor(box.y1 - py))
    x2 = min(image_w, math.ceil(box.x2 + px))
    y2 = min(image_h, math.ceil(box.y2 + py))
    if x2 <= x1 or y2 <= y1:
        return None
    return SliceWindow.make(x1, y1, x2 - x1, y2 - y1)


def cascaded_inference(
    scene: SceneRecord,
    detector,
    cp: CascadeParams,
    *,
    second_pass_detector=None,
    timer: Optional[StageTimer] = None,
    on_error: str = "skip",
    errors: Optional[list] = None,
) -> list[Detection]:
    """Coarse full-image pass, then re-detect inside every predicted cut region.

    Each crop is stretched to ``cp.second_pass_detector_cfg``'s input size,
    which is the only place an image-enhancement stage would attach; pass such
    a wrapped backend as ``second_pass_detector``. Cut-class detections never
    reach the output.
    """
    timer = timer or NullTimer()
    second = second_pass_detector or detector
    first = _region(detector, scene, full_window(scene), cp.detector_cfg, timer, on_error, errors)
    cuts = [d for d in first if d.class_id == cp.cut_class_id and d.box.area >= cp.min_cut_area]
    pooled = [d for d in first if d.class_id != cp.cut_class_id]
    for c in sort_detections(cuts):
        w = crop_window(c.box, cp.crop_pad_frac, scene.width, scene.height)
        if w is None:
            continue
        dets = _region(second, scene, w, cp.second_pass_detector_cfg, timer, on_error, errors)
        pooled.extend(d for d in dets if d.class_id != cp.cut_class_id)
    with timer.stage("merge"):
        return merge(pooled, cp.merge)


def box_gap(a: Box, b: Box) -> float:
    """Euclidean distance between the closest edges; 0 when boxes touch or overlap."""
    dx = max(0.0, b.x1 - a.x2, a.x1 - b.x2)
    dy = max(0.0, b.y1 - a.y2, a.y1 - b.y2)
    return math.hypot(dx, dy)


def generate_cut_labels(
    scene: SceneRecord,
    cluster_gap_px: float,
    min_members: int,
    cut_class_id: int = CUT_CLASS_ID,
) -> list[Annotation]:
    """Single-linkage clusters of small objects, emitted as cut-class boxes.

    Two small boxes link when their edge gap is at most ``cluster_gap_px``. A
    cluster with ``min_members`` or more boxes becomes one cut box: the members'
    enclosing box grown by half the gap per side, clipped to the image.
    """
    if cluster_gap_px < 0 or min_members < 1:
        raise ValueError("cluster_gap_px must be >= 0 and min_members >= 1")
    small = [a.box for a in scene.objects() if a.class_id != cut_class_id and is_small(a.box)]
    n = len(small)
    if n == 0:
        return []
    arr = np.array([b.as_tuple() for b in small])
    dx = np.maximum(0.0, np.maximum(arr[None, :, 0] - arr[:, None, 2], arr[:, None, 0] - arr[None, :, 2]))
    dy = np.maximum(0.0, np.maximum(arr[None, :, 1] - arr[:, None, 3], arr[:, None, 1] - arr[None, :, 3]))
    adj = np.hypot(dx, dy) <= cluster_gap_px
    _, labels = connected_components(csr_matrix(adj), directed=False)
    margin = cluster_gap_px / 2.0
    out = []
    for lab in np.unique(labels):
        members = [small[i] for i in np.flatnonzero(labels == lab)]
        if len(members) < min_members:
            continue
        e = enclosing(members)
        grown = Box(e.x1 - margin, e.y1 - margin, e.x2 + margin, e.y2 + margin).clip(scene.width, scene.height)
        out.append(Annotation(grown, cut_class_id))
    out.sort(key=lambda a: a.box.as_tuple())
    return out


@dataclass(frozen=True)
class PipelineSpec:
    kind: str = "sliced+full"
    slice_params: SliceParams = field(default_factory=lambda: SliceParams(640, 640, 0.2))
    detector_cfg: DetectorConfig = field(default_factory=DetectorConfig)
    merge: MergeParams = field(default_factory=MergeParams)
    cascade: CascadeParams = field(default_factory=CascadeParams)
    slice_max_area: Optional[float] = None
    full_min_area: Optional[float] = None
    on_error: str = "skip"

    def __post_init__(self):
        if self.kind not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.kind!r}; expected one of {PIPELINES}")
        if self.on_error not in ("skip", "abort"):
            raise ValueError("on_error must be 'skip' or 'abort'")


def run_pipeline(
    scenes: Sequence[SceneRecord],
    detector,
    spec: PipelineSpec,
    timer: Optional[StageTimer] = None,
    errors: Optional[list] = None,
) -> dict[str, list[Detection]]:
    """Run ``spec`` over ``scenes``; returns detections keyed by scene id."""
    timer = timer or NullTimer()
    out = {}
    for scene in scenes:
        with timer.run(1):
            kw = dict(timer=timer, on_error=spec.on_error, errors=errors)
            if spec.kind == "full":
                dets = full_inference(scene, detector, spec.detector_cfg, spec.merge, **kw)
            elif spec.kind == "cascade":
                dets = cascaded_inference(scene, detector, spec.cascade, **kw)
            else:
                with timer.stage("slicing"):
                    grid = compute_grid(scene.width, scene.height, spec.slice_params)
                dets = sliced_inference(
                    scene, grid, detector, spec.detector_cfg, spec.kind == "sliced+full", spec.merge,
                    spec.slice_max_area, spec.full_min_area, **kw,
                )
        out[scene.scene_id] = dets
    return out
