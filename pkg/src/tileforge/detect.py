"""Detector boundary, the input-resize contract and the oracle detector.

A detector is any callable taking a :class:`RegionRequest` and returning
detections in the region's local frame *at network-input scale*. The
framework owns the inverse mapping back to the source image (:func:`detect`).
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .geometry import Box, intersect
from .scene import SceneRecord
from .slicing import SliceWindow

@dataclass(frozen=True, slots=True)
class Detection:
    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectorConfig:
    input_w: int = 640
    input_h: int = 640
    score_threshold: float = 0.0

    def __post_init__(self):
        if self.input_w < 1 or self.input_h < 1:
            raise ValueError("detector input extents must be >= 1")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class RegionRequest:
    """One detector call: a window of a scene, to be seen at ``input_w x input_h``."""

    scene: SceneRecord
    window: SliceWindow
    input_w: int
    input_h: int

    @property
    def region_id(self) -> str:
        w = self.window
        return f"{self.scene.scene_id}@{w.offset_x},{w.offset_y},{w.width}x{w.height}"


class Detector(Protocol):
    def __call__(self, request: RegionRequest) -> list[Detection]: ...


class DetectorError(RuntimeError):
    def __init__(self, region_id: str, message: str):
        super().__init__(f"{region_id}: {message}")
        self.region_id = region_id


def resize_transform(src_w: int, src_h: int, cfg: DetectorConfig) -> tuple[float, float]:
    """Per-axis scale that stretches a ``src_w x src_h`` region onto the network input."""
    if src_w < 1 or src_h < 1:
        raise ValueError("source extents must be >= 1")
    return cfg.input_w / src_w, cfg.input_h / src_h


def _rescale(v: float, num: int, den: int) -> float:
    # unit scale must be an exact identity so a noiseless oracle echoes truth bit-for-bit
    return v if num == den else v * num / den


def to_input_frame(box: Box, src_w: int, src_h: int, cfg: DetectorConfig) -> Box:
    return Box(
        _rescale(box.x1, cfg.input_w, src_w),
        _rescale(box.y1, cfg.input_h, src_h),
        _rescale(box.x2, cfg.input_w, src_w),
        _rescale(box.y2, cfg.input_h, src_h),
    )


def from_input_frame(box: Box, src_w: int, src_h: int, cfg: DetectorConfig) -> Box:
    return Box(
        _rescale(box.x1, src_w, cfg.input_w),
        _rescale(box.y1, src_h, cfg.input_h),
        _rescale(box.x2, src_w, cfg.input_w),
        _rescale(box.y2, src_h, cfg.input_h),
    )


def full_window(scene: SceneRecord) -> SliceWindow:
    return SliceWindow.make(0, 0, scene.width, scene.height)


def detect(
    detector: Detector,
    scene: SceneRecord,
    cfg: DetectorConfig,
    window: Optional[SliceWindow] = None,
) -> list[Detection]:
    """Run ``detector`` on ``window`` (default: whole image); return global-frame detections.

    Boxes are mapped back through the inverse resize, translated by the window
    offset and clipped to the window. Boxes falling entirely outside the window
    and scores under ``cfg.score_threshold`` are dropped.
    """
    window = window or full_window(scene)
    return map_detections(call_detector(detector, scene, window, cfg), window, cfg)


def call_detector(detector: Detector, scene: SceneRecord, window: SliceWindow, cfg: DetectorConfig) -> list[Detection]:
    """Invoke the backend; any failure surfaces as :class:`DetectorError` naming the region."""
    req = RegionRequest(scene, window, cfg.input_w, cfg.input_h)
    try:
        return list(detector(req))
    except DetectorError:
        raise
    except Exception as exc:
        raise DetectorError(req.region_id, f"{type(exc).__name__}: {exc}") from exc


def map_detections(raw: Sequence[Detection], window: SliceWindow, cfg: DetectorConfig) -> list[Detection]:
    """Input-scale local detections -> clipped global-frame detections."""
    frame = window.box
    out = []
    for d in raw:
        if d.score < cfg.score_threshold:
            continue
        g = from_input_frame(d.box, window.width, window.height, cfg).translate(window.offset_x, window.offset_y)
        clipped = intersect(g, frame)
        if clipped is None:
            if g.area > 0:
                continue  # entirely outside the region
            clipped = _clamp_into(g, frame)
        out.append(Detection(clipped, d.class_id, d.score))
    return out


def _clamp_into(b: Box, frame: Box) -> Box:
    def c(v, lo, hi):
        return min(max(v, lo), hi)

    return Box(c(b.x1, frame.x1, frame.x2), c(b.y1, frame.y1, frame.y2),
               c(b.x2, frame.x1, frame.x2), c(b.y2, frame.y1, frame.y2))


# ---------------------------------------------------------------------------
# oracle detector
# ---------------------------------------------------------------------------


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit child seed for ``(seed, tags)``; independent of PYTHONHASHSEED."""
    h = hashlib.blake2b(repr((int(seed),) + tuple(tags)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class OracleParams:
    min_visible_px: float = 10.0
    base_recall: float = 0.9
    loc_jitter_frac: float = 0.0
    fp_rate: float = 0.0
    score_mean_tp: float = 0.8
    score_mean_fp: float = 0.3
    rng_seed: int = 0
    score_std: float = 0.05
    # truncated objects are seen only when this much of them is inside the region
    min_visible_fraction: float = 0.5
    fp_classes: tuple[int, ...] = (1,)
    echo_classes: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        for name in ("base_recall", "score_mean_tp", "score_mean_fp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.min_visible_px < 0 or self.loc_jitter_frac < 0 or self.fp_rate < 0 or self.score_std < 0:
            raise ValueError("oracle scales and rates must be non-negative")

    @classmethod
    def noiseless(cls, **kw) -> "OracleParams":
        base = dict(base_recall=1.0, loc_jitter_frac=0.0, fp_rate=0.0, score_std=0.0, min_visible_px=0.0)
        base.update(kw)
        return cls(**base)


def oracle_recall(apparent_side: float, p: OracleParams) -> float:
    if apparent_side >= p.min_visible_px:
        return p.base_recall
    return p.base_recall * (apparent_side / p.min_visible_px) ** 2


def apparent_side(box: Box, sx: float, sy: float) -> float:
    """Thinnest apparent extent of ``box`` once scaled onto the network input."""
    return min(box.width * sx, box.height * sy)


class OracleDetector:
    """Ground-truth-driven detector with a parametric noise model.

    Each call draws from an RNG keyed on the seed and the region, so results do
    not depend on call order and the instance can be shared across workers.
    """

    def __init__(self, params: OracleParams):
        self.params = params

    def __call__(self, request: RegionRequest) -> list[Detection]:
        p = self.params
        win = request.window
        rng = np.random.default_rng(
            derive_seed(
                p.rng_seed, "oracle", request.scene.scene_id, win.offset_x, win.offset_y,
                win.width, win.height, request.input_w, request.input_h,
            )
        )
        sx = request.input_w / win.width
        sy = request.input_h / win.height
        objects = [
            a for a in request.scene.objects()
            if p.echo_classes is None or a.class_id in p.echo_classes
        ]
        n = len(objects)
        # fixed draw layout per call: recall uniforms, jitter normals, score normals
        u = rng.random(n)
        jitter = rng.standard_normal((n, 4))
        score_noise = rng.standard_normal(n)
        frame = win.box
        out = []
        for k, a in enumerate(objects):
            clipped = intersect(a.box, frame)
            if clipped is None or clipped.area < p.min_visible_fraction * a.box.area:
                continue
            local = to_input_frame(clipped.translate(-win.offset_x, -win.offset_y), win.width, win.height,
                                   DetectorConfig(request.input_w, request.input_h))
            if u[k] >= oracle_recall(apparent_side(clipped, sx, sy), p):
                continue
            if p.loc_jitter_frac > 0:
                w, h = local.width, local.height
                j = jitter[k] * p.loc_jitter_frac * np.array([w, h, w, h])
                x1, y1, x2, y2 = (np.array(local.as_tuple()) + j).tolist()
                local = Box(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
            score = float(np.clip(p.score_mean_tp + p.score_std * score_noise[k], 0.0, 1.0))
            out.append(Detection(local, a.class_id, score))
        out.extend(self._false_positives(rng, request))
        return out

    def _false_positives(self, rng, request):
        p = self.params
        if p.fp_rate <= 0:
            return []
        n = int(rng.poisson(p.fp_rate))
        out = []
        for _ in range(n):
            side_w, side_h = np.exp(rng.uniform(np.log(4.0), np.log(128.0), size=2))
            side_w = min(side_w, request.input_w)
            side_h = min(side_h, request.input_h)
            x1 = rng.uniform(0.0, request.input_w - side_w)
            y1 = rng.uniform(0.0, request.input_h - side_h)
            cls = p.fp_classes[int(rng.integers(len(p.fp_classes)))]
            score = float(np.clip(rng.normal(p.score_mean_fp, p.score_std), 0.0, 1.0))
            out.append(Detection(Box(x1, y1, x1 + side_w, y1 + side_h), cls, score))
        return out


class FixedLatencyDetector:
    """Sleeps ``latency_s`` per call, then defers to ``inner`` (or returns nothing)."""

    def __init__(self, latency_s: float, inner: Optional[Detector] = None):
        self.latency_s = latency_s
        self.inner = inner
        self.calls = 0

    def __call__(self, request: RegionRequest) -> list[Detection]:
        self.calls += 1
        time.sleep(self.latency_s)
        return [] if self.inner is None else self.inner(request)


class ExternalDetector:
    """Runs an external command per region.

    The command is invoked as ``command + [request.json, response.json]``. The
    request carries the scene id, image path, window and network input size;
    the response must be a detections document (see :mod:`tileforge.io`) with
    boxes in the region's local frame at input scale.
    """

    def __init__(self, command: Sequence[str], timeout_s: float = 60.0):
        self.command = list(command)
        self.timeout_s = timeout_s

    def __call__(self, request: RegionRequest) -> list[Detection]:
        from .io import parse_detections

        with tempfile.TemporaryDirectory(prefix="tileforge-") as tmp:
            req_path = os.path.join(tmp, "request.json")
            resp_path = os.path.join(tmp, "response.json")
            with open(req_path, "w") as fh:
                json.dump(region_request_document(request), fh, sort_keys=True)
            try:
                proc = subprocess.run(
                    self.command + [req_path, resp_path],
                    capture_output=True, text=True, timeout=self.timeout_s,
                )
            except subprocess.TimeoutExpired:
                raise DetectorError(request.region_id, f"timed out after {self.timeout_s}s") from None
            except OSError as exc:
                raise DetectorError(request.region_id, f"launch failed: {exc}") from exc
            if proc.returncode != 0:
                raise DetectorError(
                    request.region_id, f"exit code {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            try:
                with open(resp_path) as fh:
                    per_scene = parse_detections(json.load(fh))
            except (OSError, ValueError) as exc:
                raise DetectorError(request.region_id, f"bad response: {exc}") from exc
        return per_scene.get(request.scene.scene_id, [])


def region_request_document(request: RegionRequest) -> dict:
    return {
        "scene_id": request.scene.scene_id,
        "image_path": request.scene.image_path,
        "image_width": request.scene.width,
        "image_height": request.scene.height,
        "window": request.window.as_dict(),
        "input_width": request.input_w,
        "input_height": request.input_h,
    }
