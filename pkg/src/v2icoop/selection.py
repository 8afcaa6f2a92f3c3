"""Spatial-aware selection of infrastructure feature cells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .nn import ShapeError, Tensor, ops
from .nn.init import conv_weight, zeros


def build_distance_matrix(vehicle_pose, geometry):
    """(H, W) Euclidean distance in meters from each cell centre to the vehicle."""
    xs, ys = geometry.cell_centers()
    return np.hypot(xs - vehicle_pose[0], ys - vehicle_pose[1])


def normalized_distance(vehicle_pose, geometry):
    return build_distance_matrix(vehicle_pose, geometry) / geometry.diagonal


def init_selection(rng, cfg: ModelConfig, prefix="select"):
    c, h = cfg.feature_channels, cfg.selection_hidden
    return {
        f"{prefix}.conv0.w": conv_weight(rng, 3, c + 1, h),
        f"{prefix}.conv0.b": zeros((h,)),
        f"{prefix}.conv1.w": conv_weight(rng, 1, h, 1),
        f"{prefix}.conv1.b": zeros((1,)),
    }


def score_cells(features, distance, params, prefix="select"):
    """Selection scores in [0, 1], shape (N, H, W, 1).

    ``distance`` is the normalised distance map, (N, H, W) or (N, H, W, 1).
    """
    d = distance if isinstance(distance, Tensor) else Tensor(distance)
    if d.ndim == 3:
        d = ops.reshape(d, d.shape + (1,))
    if d.shape[:3] != features.shape[:3]:
        raise ShapeError(f"score_cells: features {features.shape} vs distance {d.shape}")
    x = ops.concat([features, d], axis=-1)
    x = ops.relu(ops.conv2d(x, params[f"{prefix}.conv0.w"], params[f"{prefix}.conv0.b"]))
    return ops.sigmoid(ops.conv2d(x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"]))


def binarize_ste(scores, threshold=0.5):
    """1 where score >= threshold (ties select), else 0; identity gradient."""
    return ops.binarize_ste(scores, threshold)


def apply_mask(features, mask):
    """Zero unselected cells; ``mask`` (N, H, W, 1) broadcasts over channels."""
    if mask.shape[:3] != features.shape[:3]:
        raise ShapeError(f"apply_mask: mask {mask.shape} vs features {features.shape}")
    return ops.mul(features, mask)


@dataclass
class SelectionMask:
    values: np.ndarray  # (H, W) uint8

    @property
    def selected_count(self):
        return int(self.values.sum())

    @classmethod
    def from_scores(cls, scores, threshold=0.5):
        return cls((np.asarray(scores) >= threshold).astype(np.uint8))
