"""Feature backbone, two-branch detection head, targets, loss and decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import rotated_nms
from .config import ModelConfig
from .nn import ShapeError, Tensor, ops
from .nn.init import constant, conv_weight, zeros

REG_CHANNELS = 6  # dx, dy (cells), log length, log width, sin yaw, cos yaw


def init_backbone(rng, cfg: ModelConfig, prefix):
    c = cfg.feature_channels
    chans = [cfg.in_channels, c, c, c]
    p = {}
    for i in range(3):
        p[f"{prefix}.conv{i}.w"] = conv_weight(rng, 3, chans[i], chans[i + 1])
        p[f"{prefix}.conv{i}.b"] = zeros((chans[i + 1],))
    return p


def extract_features(obs, params, prefix):
    """Three stride-1 3x3 conv + ReLU layers; ``obs`` is (N, H, W, 3).

    Stands in for a pillar feature net and pseudo-image backbone: the
    input is already a rasterised BEV grid.
    """
    x = obs if isinstance(obs, Tensor) else Tensor(obs)
    expected = params[f"{prefix}.conv0.w"].shape[2]
    if x.ndim != 4 or x.shape[3] != expected:
        raise ShapeError(f"extract_features: expected (N, H, W, {expected}) observation, got {x.shape}")
    for i in range(3):
        x = ops.relu(ops.conv2d(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"]))
    return x


def init_detector(rng, cfg: ModelConfig, prefix="det"):
    c, h = cfg.head_dim, cfg.head_hidden
    prior_bias = -math.log((1.0 - cfg.cls_prior) / cfg.cls_prior)
    return {
        f"{prefix}.cls0.w": conv_weight(rng, 1, c, h),
        f"{prefix}.cls0.b": zeros((h,)),
        f"{prefix}.cls1.w": conv_weight(rng, 1, h, 1),
        f"{prefix}.cls1.b": constant((1,), prior_bias),
        f"{prefix}.reg0.w": conv_weight(rng, 1, c, h),
        f"{prefix}.reg0.b": zeros((h,)),
        f"{prefix}.reg1.w": conv_weight(rng, 1, h, REG_CHANNELS),
        f"{prefix}.reg1.b": zeros((REG_CHANNELS,)),
    }


def detector_heads(fused, params, prefix="det"):
    """Classification logits (N, H, W, 1) and raw regression (N, H, W, 6)."""
    p = params
    h = ops.relu(ops.conv2d(fused, p[f"{prefix}.cls0.w"], p[f"{prefix}.cls0.b"]))
    logits = ops.conv2d(h, p[f"{prefix}.cls1.w"], p[f"{prefix}.cls1.b"])
    r = ops.relu(ops.conv2d(fused, p[f"{prefix}.reg0.w"], p[f"{prefix}.reg0.b"]))
    reg = ops.conv2d(r, p[f"{prefix}.reg1.w"], p[f"{prefix}.reg1.b"])
    return logits, reg


@dataclass
class DetectionSet:
    confidence: np.ndarray  # (H, W)
    regression: np.ndarray  # (H, W, 6)
    boxes: np.ndarray  # (K, 5) decoded, descending confidence
    scores: np.ndarray  # (K,)


def decode_cell(row, col, reg, geometry):
    dx, dy, log_l, log_w, s, c = reg
    norm = math.hypot(s, c)
    if norm > 0:
        s, c = s / norm, c / norm
    cx = geometry.x_min + (col + dx) * geometry.resolution
    cy = geometry.y_min + (row + dy) * geometry.resolution
    length = math.exp(min(max(log_l, -6.0), 6.0))
    width = math.exp(min(max(log_w, -6.0), 6.0))
    return np.array([cx, cy, length, width, math.atan2(s, c)])


def decode_detections(confidence, regression, geometry, score_threshold=0.3, nms_threshold=0.5, max_candidates=300):
    rows, cols = np.nonzero(confidence >= score_threshold)
    if len(rows) > max_candidates:
        # top-k before NMS; stable order keeps ties deterministic
        top = np.argsort(-confidence[rows, cols], kind="stable")[:max_candidates]
        rows, cols = rows[np.sort(top)], cols[np.sort(top)]
    if len(rows) == 0:
        return DetectionSet(confidence, regression, np.zeros((0, 5)), np.zeros(0))
    scores = confidence[rows, cols]
    boxes = np.stack([decode_cell(r, c, regression[r, c], geometry) for r, c in zip(rows, cols)])
    keep = rotated_nms(boxes, scores, nms_threshold)
    return DetectionSet(confidence, regression, boxes[keep], scores[keep])


def detect(fused, params, geometry, cfg: ModelConfig, prefix="det"):
    """Run both heads and decode every frame of the batch."""
    logits, reg = detector_heads(fused, params, prefix)
    conf = ops._sigmoid(logits.data[..., 0])
    return [decode_detections(conf[n], reg.data[n], geometry, cfg.score_threshold, cfg.nms_threshold)
            for n in range(conf.shape[0])]


def build_targets(boxes, geometry):
    """Centre-cell assignment: (cls (H, W), reg (H, W, 6), positive mask (H, W))."""
    cls = np.zeros(geometry.shape)
    reg = np.zeros(geometry.shape + (REG_CHANNELS,))
    for b in boxes:
        fx = (b[0] - geometry.x_min) / geometry.resolution
        fy = (b[1] - geometry.y_min) / geometry.resolution
        col, row = int(math.floor(fx)), int(math.floor(fy))
        if not (0 <= row < geometry.height and 0 <= col < geometry.width):
            continue
        cls[row, col] = 1.0
        reg[row, col] = (fx - col, fy - row, math.log(b[2]), math.log(b[3]), math.sin(b[4]), math.cos(b[4]))
    return cls, reg, cls > 0


def detection_loss(logits, reg, cls_target, reg_target, cfg: ModelConfig):
    """Focal loss on all cells plus smooth-L1 at positives, per frame over max(1, #pos), batch mean.

    ``cls_target`` (N, H, W) and ``reg_target`` (N, H, W, 6) are arrays.
    """
    n = logits.shape[0]
    t = cls_target[..., None]
    npos = np.maximum(1.0, cls_target.reshape(n, -1).sum(axis=1))
    weight = (1.0 / (npos * n)).reshape(n, 1, 1, 1)
    alpha, gamma = cfg.focal_alpha, cfg.focal_gamma
    p = ops.sigmoid(logits)
    if gamma == 2.0:
        mod_pos = ops.square(ops.sub(1.0, p))
        mod_neg = ops.square(p)
    else:
        mod_pos = ops.exp(ops.scale(ops.log(ops.lower_bound(ops.sub(1.0, p), 1e-300)), gamma))
        mod_neg = ops.exp(ops.scale(ops.log(ops.lower_bound(p, 1e-300)), gamma))
    pos = ops.mul(ops.mul(mod_pos, ops.softplus(ops.scale(logits, -1.0))), alpha * t * weight)
    neg = ops.mul(ops.mul(mod_neg, ops.softplus(logits)), (1.0 - alpha) * (1.0 - t) * weight)
    focal = ops.add(ops.sum(pos), ops.sum(neg))
    diff = ops.sub(reg, reg_target)
    sl1 = ops.mul(ops.smooth_l1(diff, cfg.smooth_l1_delta), t * weight)
    return ops.add(focal, ops.sum(sl1))


@dataclass
class LossBreakdown:
    distortion: float
    rate: float
    beta: float
    total: float

    def check(self, tol=1e-9):
        return abs(self.total - (self.distortion + self.beta * self.rate)) <= tol * max(1.0, abs(self.total))


def detections_to_text(det: DetectionSet) -> str:
    return "".join(" ".join(repr(float(v)) for v in (s, *b)) + "\n" for s, b in zip(det.scores, det.boxes))


def detections_from_text(text):
    """(boxes (K, 5), scores (K,)) from 'confidence cx cy l w yaw' lines."""
    rows = [list(map(float, line.split())) for line in text.splitlines() if line.strip()]
    for i, r in enumerate(rows, 1):
        if len(r) != 6:
            raise ValueError(f"line {i}: expected 6 fields, got {len(r)}")
    if not rows:
        return np.zeros((0, 5)), np.zeros(0)
    arr = np.array(rows)
    return arr[:, 1:], arr[:, 0]
