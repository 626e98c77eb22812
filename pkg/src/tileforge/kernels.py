"""Array kernels behind the merge and matching algorithms.

Every kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. The public names at the bottom of the module are
bound to one or the other according to :mod:`tileforge._accel`. Both versions
are importable directly so tests and the benchmark can compare them.

Conventions shared by all merge kernels:

* ``boxes`` is ``(n, 4)`` float64 ``x1, y1, x2, y2`` already sorted into rank
  order (best first), ``classes`` the matching int64 class ids.
* ``metric`` is ``METRIC_IOU`` or ``METRIC_IOS``. For IoS the lower-ranked
  box is the "self" box: ``ios(candidate, reference)``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

METRIC_IOU = 0
METRIC_IOS = 1


# ---------------------------------------------------------------------------
# numba loop kernels
# ---------------------------------------------------------------------------


@njit
def _pair_metric(c, r, metric):
    iw = min(c[2], r[2]) - max(c[0], r[0])
    ih = min(c[3], r[3]) - max(c[1], r[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_c = (c[2] - c[0]) * (c[3] - c[1])
    if metric == 1:
        return inter / area_c if area_c > 0.0 else 0.0
    union = area_c + (r[2] - r[0]) * (r[3] - r[1]) - inter
    return inter / union if union > 0.0 else 0.0


@njit
def _nms_keep_numba(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        if not keep[i]:
            continue
        for j in range(i + 1, n):
            if not keep[j]:
                continue
            if class_aware and classes[j] != classes[i]:
                continue
            if _pair_metric(boxes[j], boxes[i], metric) >= threshold:
                keep[j] = False
    return keep


@njit
def _greedy_nmm_labels_numba(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if labels[i] >= 0:
            continue
        labels[i] = i
        for j in range(i + 1, n):
            if labels[j] >= 0:
                continue
            if class_aware and classes[j] != classes[i]:
                continue
            if _pair_metric(boxes[j], boxes[i], metric) >= threshold:
                labels[j] = i
    return labels


@njit
def _nmm_labels_numba(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = seed
        queue[0] = seed
        head = 0
        tail = 1
        while head < tail:
            m = queue[head]
            head += 1
            for j in range(seed + 1, n):
                if labels[j] >= 0:
                    continue
                if class_aware and classes[j] != classes[seed]:
                    continue
                # rank order decides which box plays "self" under IoS
                if j > m:
                    v = _pair_metric(boxes[j], boxes[m], metric)
                else:
                    v = _pair_metric(boxes[m], boxes[j], metric)
                if v >= threshold:
                    labels[j] = seed
                    queue[tail] = j
                    tail += 1
    return labels


@njit
def _soft_nms_numba(boxes, classes, scores, metric, sigma, class_aware):
    n = boxes.shape[0]
    out = scores.copy()
    done = np.zeros(n, dtype=np.bool_)
    for _ in range(n):
        best = -1
        best_score = -1.0
        for k in range(n):
            if not done[k] and out[k] > best_score:
                best = k
                best_score = out[k]
        done[best] = True
        for j in range(n):
            if done[j]:
                continue
            if class_aware and classes[j] != classes[best]:
                continue
            v = _pair_metric(boxes[j], boxes[best], metric)
            out[j] *= np.exp(-(v * v) / sigma)
    return out


@njit
def _greedy_match_numba(det_boxes, gt_boxes, threshold):
    nd = det_boxes.shape[0]
    ng = gt_boxes.shape[0]
    match = np.full(nd, -1, dtype=np.int64)
    taken = np.zeros(ng, dtype=np.bool_)
    for d in range(nd):
        best = -1
        best_iou = threshold
        for g in range(ng):
            if taken[g]:
                continue
            v = _pair_metric(det_boxes[d], gt_boxes[g], 0)
            if v >= best_iou and (best < 0 or v > best_iou):
                best = g
                best_iou = v
        if best >= 0:
            taken[best] = True
            match[d] = best
    return match


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------


def pairwise_metric(cand, ref, metric=METRIC_IOU):
    """Matrix ``M[i, j] = metric(cand[i], ref[j])``; zero-area conventions give 0."""
    cand = np.asarray(cand, dtype=np.float64).reshape(-1, 4)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(cand[:, None, 2], ref[None, :, 2]) - np.maximum(cand[:, None, 0], ref[None, :, 0])
    ih = np.minimum(cand[:, None, 3], ref[None, :, 3]) - np.maximum(cand[:, None, 1], ref[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_c = ((cand[:, 2] - cand[:, 0]) * (cand[:, 3] - cand[:, 1]))[:, None]
    if metric == METRIC_IOS:
        denom = np.broadcast_to(area_c, inter.shape)
    else:
        area_r = ((ref[:, 2] - ref[:, 0]) * (ref[:, 3] - ref[:, 1]))[None, :]
        denom = area_c + area_r - inter
    out = np.zeros_like(inter)
    np.divide(inter, denom, out=out, where=(denom > 0) & (inter > 0))
    return out


def _ranked_metric_matrix(boxes, metric):
    # symmetric R with R[i, j] = metric(boxes[j], boxes[i]) for i < j
    upper = np.triu(pairwise_metric(boxes, boxes, metric).T, 1)
    return upper + upper.T


def _class_mask(classes, class_aware):
    classes = np.asarray(classes)
    if not class_aware:
        return np.ones((classes.size, classes.size), dtype=bool)
    return classes[:, None] == classes[None, :]


def _nms_keep_numpy(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    keep = np.ones(n, dtype=bool)
    if n == 0:
        return keep
    hit = (_ranked_metric_matrix(boxes, metric) >= threshold) & _class_mask(classes, class_aware)
    for i in range(n):
        if keep[i]:
            later = hit[i].copy()
            later[: i + 1] = False
            keep &= ~later
    return keep


def _greedy_nmm_labels_numpy(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    hit = (_ranked_metric_matrix(boxes, metric) >= threshold) & _class_mask(classes, class_aware)
    idx = np.arange(n)
    for i in range(n):
        if labels[i] >= 0:
            continue
        members = hit[i] & (labels < 0) & (idx > i)
        labels[members] = i
        labels[i] = i
    return labels


def _nmm_labels_numpy(boxes, classes, metric, threshold, class_aware):
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    adj = (_ranked_metric_matrix(boxes, metric) >= threshold) & _class_mask(classes, class_aware)
    np.fill_diagonal(adj, True)
    # min-label propagation converges to the smallest rank in each component
    labels = np.arange(n, dtype=np.int64)
    big = np.int64(n)
    while True:
        nxt = np.where(adj, labels[None, :], big).min(axis=1)
        if np.array_equal(nxt, labels):
            return labels
        labels = nxt


def _soft_nms_numpy(boxes, classes, scores, metric, sigma, class_aware):
    n = boxes.shape[0]
    out = np.array(scores, dtype=np.float64, copy=True)
    if n == 0:
        return out
    m = pairwise_metric(boxes, boxes, metric)  # m[j, b] = metric(box j, box b)
    same = _class_mask(classes, class_aware)
    done = np.zeros(n, dtype=bool)
    for _ in range(n):
        best = int(np.argmax(np.where(done, -np.inf, out)))
        done[best] = True
        sel = ~done & same[:, best]
        v = m[sel, best]
        out[sel] *= np.exp(-(v * v) / sigma)
    return out


def _greedy_match_numpy(det_boxes, gt_boxes, threshold):
    nd = det_boxes.shape[0]
    match = np.full(nd, -1, dtype=np.int64)
    if nd == 0 or gt_boxes.shape[0] == 0:
        return match
    ious = pairwise_metric(det_boxes, gt_boxes, METRIC_IOU)
    taken = np.zeros(gt_boxes.shape[0], dtype=bool)
    for d in range(nd):
        row = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(row))  # first index among equal maxima
        if row[g] >= threshold:
            taken[g] = True
            match[d] = g
    return match


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

NUMBA_KERNELS = {
    "nms_keep": _nms_keep_numba,
    "greedy_nmm_labels": _greedy_nmm_labels_numba,
    "nmm_labels": _nmm_labels_numba,
    "soft_nms": _soft_nms_numba,
    "greedy_match": _greedy_match_numba,
}
NUMPY_KERNELS = {
    "nms_keep": _nms_keep_numpy,
    "greedy_nmm_labels": _greedy_nmm_labels_numpy,
    "nmm_labels": _nmm_labels_numpy,
    "soft_nms": _soft_nms_numpy,
    "greedy_match": _greedy_match_numpy,
}
_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

nms_keep = _ACTIVE["nms_keep"]
greedy_nmm_labels = _ACTIVE["greedy_nmm_labels"]
nmm_labels = _ACTIVE["nmm_labels"]
soft_nms = _ACTIVE["soft_nms"]
greedy_match = _ACTIVE["greedy_match"]
