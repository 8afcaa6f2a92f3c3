"""Rotated IoU, rotated NMS, and all-point-interpolated average precision."""

from __future__ import annotations

import math

import numpy as np

from .geometry import intersection_area


def rotated_iou(a, b):
    """IoU of two boxes ``(cx, cy, l, w, yaw)``; degenerate boxes give 0."""
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    if area_a <= 0 or area_b <= 0:
        return 0.0
    # disjoint circumscribed circles: skip the clipping
    reach = 0.5 * (math.hypot(a[2], a[3]) + math.hypot(b[2], b[3]))
    if math.hypot(a[0] - b[0], a[1] - b[1]) >= reach:
        return 0.0
    inter = intersection_area(a, b)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def rotated_nms(boxes, scores, iou_threshold):
    """Greedy NMS; returns kept indices in descending score order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    order = np.argsort(-np.asarray(scores), kind="stable")
    radius = 0.5 * np.hypot(boxes[:, 2], boxes[:, 3])
    keep = []
    for i in order:
        if keep:
            k = np.asarray(keep)
            near = k[np.hypot(boxes[k, 0] - boxes[i, 0], boxes[k, 1] - boxes[i, 1]) < radius[k] + radius[i]]
        else:
            near = ()
        if all(rotated_iou(boxes[i], boxes[j]) <= iou_threshold for j in near):
            keep.append(int(i))
    return keep


def average_precision(predictions, ground_truths, iou_threshold):
    """AP over a list of frames.

    ``predictions[k]`` is ``(boxes (n, 5), scores (n,))`` for frame k and
    ``ground_truths[k]`` an ``(m, 5)`` array. Predictions from all frames
    are ranked together; each ground truth matches at most once.
    """
    n_gt = sum(len(g) for g in ground_truths)
    flat = []
    for k, (boxes, scores) in enumerate(predictions):
        for b, s in zip(boxes, scores):
            flat.append((float(s), k, b))
    if n_gt == 0:
        return 1.0 if not flat else 0.0
    if not flat:
        return 0.0
    flat.sort(key=lambda t: -t[0])
    used = [np.zeros(len(g), dtype=bool) for g in ground_truths]
    tp = np.zeros(len(flat))
    for r, (_, k, b) in enumerate(flat):
        gts = ground_truths[k]
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if used[k][j]:
                continue
            iou = rotated_iou(b, g)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            used[k][best_j] = True
            tp[r] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(flat) + 1)
    return _area_under_pr(recall, precision)


def _area_under_pr(recall, precision):
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
