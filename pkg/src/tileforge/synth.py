"""Deterministic synthetic scenes for desk-scale experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .detect import derive_seed
from .geometry import SMALL_AREA, Box
from .scene import Annotation, SceneRecord


@dataclass(frozen=True)
class SynthParams:
    image_w: int = 1920
    image_h: int = 1080
    n_objects: Optional[int] = 30
    density_per_mpx: Optional[float] = None
    size_min: float = 16.0
    size_max: float = 24.0
    # when set, sides below 32 px are drawn with this probability (mixture of two log-uniform ranges)
    small_fraction: Optional[float] = None
    aspect_max: float = 1.0
    n_clusters: int = 0
    cluster_radius: float = 50.0
    cluster_fraction: float = 0.0
    class_weights: tuple[float, ...] = (1.0,)
    first_class_id: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.image_w < 1 or self.image_h < 1:
            raise ValueError("image extents must be >= 1")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError("need 0 < size_min <= size_max")
        for name in ("cluster_fraction", "small_fraction"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.small_fraction is not None and not self.size_min < 32.0 < self.size_max:
            raise ValueError("small_fraction needs size_min < 32 < size_max")
        if self.cluster_fraction > 0 and self.n_clusters < 1:
            raise ValueError("cluster_fraction > 0 needs n_clusters >= 1")
        if self.aspect_max < 1.0 or self.cluster_radius < 0:
            raise ValueError("aspect_max must be >= 1 and cluster_radius >= 0")
        if not self.class_weights or min(self.class_weights) < 0 or sum(self.class_weights) <= 0:
            raise ValueError("class_weights must be non-negative with a positive sum")
        if (self.n_objects is None) == (self.density_per_mpx is None):
            raise ValueError("set exactly one of n_objects and density_per_mpx")

    @property
    def object_count(self) -> int:
        if self.n_objects is not None:
            return self.n_objects
        return int(round(self.density_per_mpx * self.image_w * self.image_h / 1e6))

    @property
    def class_ids(self) -> list[int]:
        return [self.first_class_id + k for k in range(len(self.class_weights))]


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def _sides(rng, p: SynthParams, n: int) -> np.ndarray:
    if p.small_fraction is None:
        side = _log_uniform(rng, p.size_min, p.size_max, n)
    else:
        small = rng.random(n) < p.small_fraction
        side = np.where(small, _log_uniform(rng, p.size_min, 32.0, n), _log_uniform(rng, 32.0, p.size_max, n))
    # aspect split keeps area = side**2 so the small/large routing depends on side only
    aspect = _log_uniform(rng, 1.0, p.aspect_max, n) if p.aspect_max > 1.0 else np.ones(n)
    flip = rng.random(n) < 0.5
    aspect = np.where(flip, 1.0 / aspect, aspect)
    w = side * np.sqrt(aspect)
    h = side / np.sqrt(aspect)
    return np.stack([np.minimum(w, p.image_w), np.minimum(h, p.image_h)], axis=1)


def _draw_cluster_centres(rng, p):
    # inset by two radii so clusters rarely touch the border
    mx = min(2 * p.cluster_radius, p.image_w / 2)
    my = min(2 * p.cluster_radius, p.image_h / 2)
    return np.column_stack([rng.uniform(mx, p.image_w - mx, p.n_clusters),
                            rng.uniform(my, p.image_h - my, p.n_clusters)])


def cluster_centres(p: SynthParams, scene_id: str = "synth-0") -> np.ndarray:
    """The ``(n_clusters, 2)`` cluster centres :func:`generate_scene` uses for ``scene_id``."""
    return _draw_cluster_centres(np.random.default_rng(derive_seed(p.rng_seed, "synth", scene_id)), p)


def generate_scene(p: SynthParams, scene_id: str = "synth-0") -> SceneRecord:
    """One scene; identical for identical ``(p, scene_id)``.

    Clustered objects are centred on a Gaussian (std ``cluster_radius``)
    around uniformly placed cluster centres; the rest are uniform. Centres are
    clamped so every box stays inside the image.
    """
    rng = np.random.default_rng(derive_seed(p.rng_seed, "synth", scene_id))
    n = p.object_count
    centres_of_clusters = _draw_cluster_centres(rng, p)
    wh = _sides(rng, p, n)
    clustered = rng.random(n) < p.cluster_fraction
    which = rng.integers(max(p.n_clusters, 1), size=n)
    gauss = rng.standard_normal((n, 2)) * p.cluster_radius
    uniform = np.column_stack([rng.uniform(0, p.image_w, n), rng.uniform(0, p.image_h, n)])
    weights = np.asarray(p.class_weights, dtype=np.float64)
    cls = rng.choice(p.class_ids, size=n, p=weights / weights.sum())
    if p.n_clusters > 0:
        centres = np.where(clustered[:, None], centres_of_clusters[which] + gauss, uniform)
    else:
        centres = uniform
    anns = []
    for k in range(n):
        w, h = wh[k]
        cx = min(max(centres[k, 0], w / 2), p.image_w - w / 2)
        cy = min(max(centres[k, 1], h / 2), p.image_h - h / 2)
        box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2).clip(p.image_w, p.image_h)
        anns.append(Annotation(box, int(cls[k])))
    return SceneRecord(scene_id, p.image_w, p.image_h, tuple(anns))


def generate_dataset(p: SynthParams, n_scenes: int, prefix: str = "synth") -> list[SceneRecord]:
    return [generate_scene(p, f"{prefix}-{i:05d}") for i in range(n_scenes)]


def size_histogram(scenes, buckets=(("small", 0.0, SMALL_AREA), ("medium", SMALL_AREA, 9216.0),
                                    ("large", 9216.0, math.inf))) -> dict[str, int]:
    counts = {name: 0 for name, _, _ in buckets}
    for s in scenes:
        for a in s.objects():
            for name, lo, hi in buckets:
                if lo <= a.box.area < hi:
                    counts[name] += 1
    return counts


def render_scene(scene: SceneRecord, background: int = 32) -> np.ndarray:
    """Grey ``(h, w)`` uint8 raster with each object drawn as a solid rectangle.

    Only meant for smoke-testing external detector integrations.
    """
    img = np.full((scene.height, scene.width), background, dtype=np.uint8)
    for a in scene.objects():
        b = a.box
        shade = 96 + (37 * a.class_id) % 160
        img[int(b.y1):int(math.ceil(b.y2)), int(b.x1):int(math.ceil(b.x2))] = shade
    return img
