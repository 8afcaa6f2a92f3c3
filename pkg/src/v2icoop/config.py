from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    feature_channels: int = 16
    selection_hidden: int = 8
    hyper_channels: int = 8
    head_dim: int = 16
    head_hidden: int = 16
    sigma_min: float = 0.11
    selection_threshold: float = 0.5
    score_threshold: float = 0.3
    nms_threshold: float = 0.5
    prior_filters: tuple = (3, 3, 3)
    prior_init_scale: float = 4.0
    cls_prior: float = 0.01
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_delta: float = 1.0 / 9.0
