"""Duplicate resolution: NMS, soft-NMS, greedy and transitive box merging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .detect import Detection
from .geometry import Box

METHODS = ("nms", "lsnms", "nmm", "greedy-nmm")
METRICS = {"iou": kernels.METRIC_IOU, "ios": kernels.METRIC_IOS}


@dataclass(frozen=True)
class MergeParams:
    method: str = "nms"
    match_metric: str = "iou"
    match_threshold: float = 0.5
    class_aware: bool = True
    lsnms_sigma: float = 0.5
    final_score_threshold: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown merge method {self.method!r}; expected one of {METHODS}")
        if self.match_metric not in METRICS:
            raise ValueError(f"unknown match metric {self.match_metric!r}")
        if not 0.0 < self.match_threshold <= 1.0:
            raise ValueError(f"match_threshold must lie in (0, 1], got {self.match_threshold}")
        if self.lsnms_sigma <= 0:
            raise ValueError("lsnms_sigma must be positive")
        if not 0.0 <= self.final_score_threshold <= 1.0:
            raise ValueError("final_score_threshold must lie in [0, 1]")


def rank_order(dets: Sequence[Detection], scores=None) -> np.ndarray:
    """Indices sorting ``dets`` best-first.

    Score descending, then larger area, then lexicographic ``(x1, y1, x2, y2)``,
    then class id, so the order never depends on input order.
    """
    n = len(dets)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    s = np.array([d.score for d in dets]) if scores is None else np.asarray(scores)
    cls = np.array([d.class_id for d in dets])
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    # lexsort: last key is primary
    return np.lexsort((cls, boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -area, -s))


def sort_detections(dets: Sequence[Detection]) -> list[Detection]:
    return [dets[i] for i in rank_order(dets)]


def _ranked_arrays(dets):
    ranked = sort_detections(dets)
    boxes = np.array([d.box.as_tuple() for d in ranked], dtype=np.float64).reshape(-1, 4)
    classes = np.array([d.class_id for d in ranked], dtype=np.int64)
    return ranked, boxes, classes


def _final(dets, p):
    return sort_detections([d for d in dets if d.score >= p.final_score_threshold])


def nms(dets: Sequence[Detection], p: MergeParams) -> list[Detection]:
    ranked, boxes, classes = _ranked_arrays(dets)
    if not ranked:
        return []
    keep = kernels.nms_keep(boxes, classes, METRICS[p.match_metric], float(p.match_threshold), p.class_aware)
    return _final([d for d, k in zip(ranked, keep) if k], p)


def lsnms(dets: Sequence[Detection], p: MergeParams) -> list[Detection]:
    """Gaussian soft-NMS: decay overlapping scores by ``exp(-m**2 / sigma)``.

    The highest *current* score is taken at every step; boxes never change.
    """
    ranked, boxes, classes = _ranked_arrays(dets)
    if not ranked:
        return []
    scores = np.array([d.score for d in ranked], dtype=np.float64)
    decayed = kernels.soft_nms(
        boxes, classes, scores, METRICS[p.match_metric], float(p.lsnms_sigma), p.class_aware
    )
    out = [Detection(d.box, d.class_id, float(s)) for d, s in zip(ranked, decayed)]
    return _final(out, p)


def _emit_clusters(ranked, labels):
    clusters: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        clusters.setdefault(int(lab), []).append(i)
    out = []
    for seed, members in clusters.items():
        mb = [ranked[i].box for i in members]
        box = Box(min(b.x1 for b in mb), min(b.y1 for b in mb), max(b.x2 for b in mb), max(b.y2 for b in mb))
        out.append(Detection(box, ranked[seed].class_id, max(ranked[i].score for i in members)))
    return out


def greedy_nmm(dets: Sequence[Detection], p: MergeParams) -> list[Detection]:
    """Merge every box matching a cluster seed into the seed's enclosing box."""
    ranked, boxes, classes = _ranked_arrays(dets)
    if not ranked:
        return []
    labels = kernels.greedy_nmm_labels(
        boxes, classes, METRICS[p.match_metric], float(p.match_threshold), p.class_aware
    )
    return _final(_emit_clusters(ranked, labels), p)


def nmm(dets: Sequence[Detection], p: MergeParams) -> list[Detection]:
    """Like :func:`greedy_nmm`, but membership closes transitively over all members."""
    ranked, boxes, classes = _ranked_arrays(dets)
    if not ranked:
        return []
    labels = kernels.nmm_labels(boxes, classes, METRICS[p.match_metric], float(p.match_threshold), p.class_aware)
    return _final(_emit_clusters(ranked, labels), p)


_DISPATCH = {"nms": nms, "lsnms": lsnms, "nmm": nmm, "greedy-nmm": greedy_nmm}


def merge(dets: Sequence[Detection], p: MergeParams) -> list[Detection]:
    return _DISPATCH[p.method](dets, p)
