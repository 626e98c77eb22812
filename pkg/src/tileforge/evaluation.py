"""COCO-style detection evaluation with size buckets.

Matching is greedy in score order at each IoU threshold. Size buckets are
assigned by ground-truth area; a detection matched to a ground truth outside
the bucket is ignored, and an unmatched detection counts as a false positive
only in the bucket its own area falls into.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .detect import Detection
from .fusion import rank_order, sort_detections
from .geometry import Box, SMALL_AREA, ios
from .scene import VISDRONE_CLASSES, ClassTable, SceneRecord

ALL = "all"
# k / 100 is correctly rounded, so recall 3/10 compares equal to grid point 0.3
RECALL_GRID = np.arange(101) / 100.0
DEFAULT_BUCKETS = (
    ("small", 0.0, SMALL_AREA),
    ("medium", SMALL_AREA, 96.0 * 96.0),
    ("large", 96.0 * 96.0, math.inf),
)


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = (0.5,)
    size_buckets: tuple[tuple[str, float, float], ...] = DEFAULT_BUCKETS
    max_dets_per_image: int = 500
    class_ids: Optional[tuple[int, ...]] = None
    interpolation: str = "101"
    ignore_region_ios: float = 0.5
    class_table: ClassTable = field(default=VISDRONE_CLASSES, compare=False)

    def __post_init__(self):
        ts = list(self.iou_thresholds)
        if not ts or ts != sorted(ts) or any(not 0.0 < t <= 1.0 for t in ts):
            raise ValueError(f"iou_thresholds must be sorted and lie in (0, 1], got {ts}")
        if self.interpolation not in ("101", "all-points"):
            raise ValueError("interpolation must be '101' or 'all-points'")
        bounds = sorted((lo, hi) for _, lo, hi in self.size_buckets)
        if bounds and (bounds[0][0] != 0.0 or bounds[-1][1] != math.inf
                       or any(a[1] != b[0] for a, b in zip(bounds, bounds[1:]))):
            raise ValueError("size buckets must be disjoint and cover [0, inf)")
        names = [n for n, _, _ in self.size_buckets]
        if ALL in names or len(set(names)) != len(names):
            raise ValueError(f"bucket names must be unique and not {ALL!r}")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be >= 1")

    @property
    def bucket_names(self) -> list[str]:
        return [ALL] + [n for n, _, _ in self.size_buckets]

    def bucket_range(self, name: str) -> tuple[float, float]:
        if name == ALL:
            return (0.0, math.inf)
        for n, lo, hi in self.size_buckets:
            if n == name:
                return (lo, hi)
        raise KeyError(name)


def match_detections(dets: Sequence[Detection], gts: Sequence[Box], iou_threshold: float) -> list[Optional[int]]:
    """Greedy one-to-one matching; returns, per input detection, the matched GT index or ``None``.

    Detections are visited best-first; each takes the unmatched GT of highest
    IoU at or above the threshold, lowest GT index on ties.
    """
    order = rank_order(dets)
    det_boxes = np.array([dets[i].box.as_tuple() for i in order], dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.array([g.as_tuple() for g in gts], dtype=np.float64).reshape(-1, 4)
    m = kernels.greedy_match(det_boxes, gt_boxes, float(iou_threshold))
    out: list[Optional[int]] = [None] * len(dets)
    for pos, i in enumerate(order):
        out[i] = None if m[pos] < 0 else int(m[pos])
    return out


def precision_recall(scores, is_tp, n_gt):
    """Cumulative precision/recall over detections sorted by score (stable)."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    tp = np.asarray(is_tp, dtype=bool)[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    return precision, recall


def interpolated_precision(precision, recall, grid=RECALL_GRID):
    """Max precision at recall >= r for each r in ``grid`` (0 where unreachable)."""
    if len(precision) == 0:
        return np.zeros(len(grid))
    env = np.maximum.accumulate(np.asarray(precision)[::-1])[::-1]
    idx = np.searchsorted(recall, grid, side="left")
    out = np.zeros(len(grid))
    ok = idx < len(env)
    out[ok] = env[idx[ok]]
    return out


def average_precision(scores, is_tp, n_gt: int, interpolation: str = "101") -> Optional[float]:
    """AP from scored TP/FP flags against ``n_gt`` ground truths; ``None`` when ``n_gt`` is 0."""
    if n_gt <= 0:
        return None
    precision, recall = precision_recall(scores, is_tp, n_gt)
    if interpolation == "101":
        return float(interpolated_precision(precision, recall).mean())
    if len(precision) == 0:
        return 0.0
    # area under the monotone envelope, stepping at each recall increase
    env = np.maximum.accumulate(precision[::-1])[::-1]
    r = np.concatenate(([0.0], recall))
    return float(np.sum((r[1:] - r[:-1]) * env))


@dataclass
class EvalReport:
    ap: dict  # (class_id, iou_threshold, bucket) -> float | None
    mean_ap: dict  # (iou_threshold, bucket) -> float | None
    n_gt: dict  # (class_id, bucket) -> int
    pr_curves: dict  # (class_id, iou_threshold) -> 101 interpolated precisions, bucket "all"
    params: EvalParams
    timing: Optional[dict] = None

    @property
    def ap50(self) -> Optional[float]:
        return self.mean_ap.get((self.params.iou_thresholds[0], ALL))

    @property
    def ap_small(self) -> Optional[float]:
        return self.mean_ap.get((self.params.iou_thresholds[0], "small"))

    def to_dict(self) -> dict:
        """JSON-ready document; deterministic content under ``results``, timing apart."""
        p = self.params
        classes = sorted({c for c, _, _ in self.ap})
        results = {
            "iou_thresholds": list(p.iou_thresholds),
            "buckets": {n: [lo, None if hi == math.inf else hi] for n, lo, hi in p.size_buckets},
            "interpolation": p.interpolation,
            "map": {
                f"{t:g}": {b: self.mean_ap[(t, b)] for b in p.bucket_names} for t in p.iou_thresholds
            },
            "per_class": {
                str(c): {
                    "name": p.class_table.name(c),
                    "n_gt": {b: self.n_gt[(c, b)] for b in p.bucket_names},
                    "ap": {f"{t:g}": {b: self.ap[(c, t, b)] for b in p.bucket_names} for t in p.iou_thresholds},
                    "pr_curve": {f"{t:g}": [float(v) for v in self.pr_curves[(c, t)]] for t in p.iou_thresholds},
                }
                for c in classes
            },
        }
        return {"results": results, "timing": self.timing}


def _in_range(a, lo, hi):
    return lo <= a < hi


def evaluate(
    predictions: Mapping[str, Sequence[Detection]],
    ground_truth: Sequence[SceneRecord],
    p: EvalParams = EvalParams(),
    timing: Optional[dict] = None,
) -> EvalReport:
    """Evaluate per-image predictions against ground-truth scenes.

    Scenes missing from ``predictions`` count as having no detections.
    """
    table = p.class_table
    reserved = {table.ignored_id, table.cut_id}
    if p.class_ids is not None:
        classes = list(p.class_ids)
    else:
        classes = sorted({a.class_id for s in ground_truth for a in s.objects(table)} - reserved)
    buckets = [(b, *p.bucket_range(b)) for b in p.bucket_names]
    recs = {(c, t, b): ([], []) for c in classes for t in p.iou_thresholds for b, _, _ in buckets}
    n_gt = {(c, b): 0 for c in classes for b, _, _ in buckets}

    for scene in ground_truth:
        dets = [d for d in predictions.get(scene.scene_id, ()) if d.class_id not in reserved]
        regions = scene.ignore_regions(table)
        if regions:
            dets = [d for d in dets if all(ios(d.box, r) < p.ignore_region_ios for r in regions)]
        if len(dets) > p.max_dets_per_image:
            dets = [dets[i] for i in rank_order(dets)[: p.max_dets_per_image]]
        objects = scene.objects(table)
        for c in classes:
            gts = [a.box for a in objects if a.class_id == c]
            for b, lo, hi in buckets:
                n_gt[(c, b)] += sum(_in_range(g.area, lo, hi) for g in gts)
            dc = sort_detections([d for d in dets if d.class_id == c])  # fixes the order of score ties
            if not dc:
                continue
            for t in p.iou_thresholds:
                match = match_detections(dc, gts, t)
                for b, lo, hi in buckets:
                    scores, flags = recs[(c, t, b)]
                    for d, g in zip(dc, match):
                        if g is not None:
                            if _in_range(gts[g].area, lo, hi):
                                scores.append(d.score)
                                flags.append(True)
                        elif _in_range(d.box.area, lo, hi):
                            scores.append(d.score)
                            flags.append(False)

    ap, curves = {}, {}
    for (c, t, b), (scores, flags) in recs.items():
        ap[(c, t, b)] = average_precision(scores, flags, n_gt[(c, b)], p.interpolation)
        if b == ALL:
            if n_gt[(c, b)] > 0:
                prec, rec = precision_recall(scores, flags, n_gt[(c, b)])
                curves[(c, t)] = interpolated_precision(prec, rec)
            else:
                curves[(c, t)] = np.zeros(len(RECALL_GRID))
    maps = {}
    for t in p.iou_thresholds:
        for b, _, _ in buckets:
            vals = [ap[(c, t, b)] for c in classes if ap[(c, t, b)] is not None]
            maps[(t, b)] = float(np.mean(vals)) if vals else None
    return EvalReport(ap, maps, n_gt, curves, p, timing)
