"""Per-cell scaled dot-product attention between vehicle and received features."""

from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig
from .nn import ShapeError, Tensor, ops
from .nn.init import conv_weight, zeros

# cap on the unselected-cell logit gap so exp() stays finite
_MAX_LOGIT_GAP = 50.0


def init_fusion(rng, cfg: ModelConfig, prefix="fusion"):
    c, d = cfg.feature_channels, cfg.head_dim
    if d != c:
        raise ValueError(f"head_dim ({d}) must equal feature_channels ({c}) for the residual path")
    p = {}
    for name in ("q", "k", "v"):
        p[f"{prefix}.{name}.w"] = conv_weight(rng, 1, c, d)
        p[f"{prefix}.{name}.b"] = zeros((d,))
    return p


def _proj(x, params, name, prefix):
    return ops.conv2d(x, params[f"{prefix}.{name}.w"], params[f"{prefix}.{name}.b"])


def fuse(f_v, f_i, mask, params, prefix="fusion", return_weights=False):
    """Attend from each vehicle cell over {vehicle} plus {infrastructure if selected}.

    ``mask`` is (N, H, W, 1), a Tensor (straight-through, so the softmax
    also trains the selector) or an array. Output adds the vehicle
    features back as a residual.
    """
    if f_v.shape != f_i.shape:
        raise ShapeError(f"fuse: vehicle grid {f_v.shape} vs infrastructure grid {f_i.shape}")
    m = mask if isinstance(mask, Tensor) else Tensor(mask)
    if m.shape != f_v.shape[:3] + (1,):
        raise ShapeError(f"fuse: mask shape {m.shape} does not match grid {f_v.shape}")
    d = params[f"{prefix}.q.w"].shape[3]
    inv = 1.0 / math.sqrt(d)
    q = _proj(f_v, params, "q", prefix)
    k_v = _proj(f_v, params, "k", prefix)
    v_v = _proj(f_v, params, "v", prefix)
    k_i = _proj(f_i, params, "k", prefix)
    v_i = _proj(f_i, params, "v", prefix)
    l_v = ops.scale(ops.sum(ops.mul(q, k_v), axis=-1, keepdims=True), inv)
    l_i = ops.scale(ops.sum(ops.mul(q, k_i), axis=-1, keepdims=True), inv)
    sel = m.data > 0
    shift = np.where(sel, np.maximum(l_v.data, l_i.data), l_v.data)
    e_v = ops.exp(ops.sub(l_v, shift))
    e_i = ops.mul(ops.exp(ops.clip(ops.sub(l_i, shift), -np.inf, _MAX_LOGIT_GAP)), m)
    den = ops.add(e_v, e_i)
    w_v = ops.div(e_v, den)
    w_i = ops.div(e_i, den)
    out = ops.add(ops.add(ops.mul(w_v, v_v), ops.mul(w_i, v_i)), f_v)
    if return_weights:
        return out, (w_v, w_i)
    return out


def fuse_vehicle_only(f_v, params, prefix="fusion"):
    """Attention over the vehicle element alone: value(F_V) + F_V."""
    return ops.add(_proj(f_v, params, "v", prefix), f_v)
