"""End-to-end assembly: infrastructure encoder side, vehicle decoder side, training objective.

Parameter keys are flat strings grouped by component prefix:
``veh.`` / ``inf.`` backbones, ``select.``, ``hyper_enc.``, ``hyper_dec.``,
``prior.``, ``fusion.`` and ``det.``.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .codec.wire import EntropyModels, decode_message, encode_message
from .config import ModelConfig
from .entropy import (factorized_likelihood, gaussian_likelihood, hyper_decode, hyper_encode, init_hyper,
                      init_prior, quantize, rate_estimate, uniform_noise)
from .fusion import fuse, fuse_vehicle_only, init_fusion
from .nn import NonFiniteError, Tensor, ops
from .perception import build_targets, detect, detection_loss, detector_heads, extract_features, init_backbone, init_detector
from .scene import rasterize_view
from .selection import apply_mask, binarize_ste, init_selection, normalized_distance, score_cells

COMPONENTS = ("veh", "inf", "select", "hyper_enc", "hyper_dec", "prior", "fusion", "det")


class ComponentError(NonFiniteError):
    def __init__(self, component, message):
        super().__init__(f"{component}: {message}")
        self.component = component


@contextmanager
def component(name):
    try:
        yield
    except ComponentError:
        raise
    except NonFiniteError as e:
        raise ComponentError(name, str(e)) from None


def component_of(key):
    return key.split(".", 1)[0]


def init_params(seed, cfg: ModelConfig = ModelConfig()):
    """All trainable parameters, deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    p = {}
    p.update(init_backbone(rng, cfg, "veh"))
    p.update(init_backbone(rng, cfg, "inf"))
    p.update(init_selection(rng, cfg))
    p.update(init_hyper(rng, cfg))
    p.update(init_prior(rng, cfg))
    p.update(init_fusion(rng, cfg))
    p.update(init_detector(rng, cfg))
    for k, v in p.items():
        v.requires_grad = True
        v.name = k
    return p


@dataclass
class Batch:
    obs_vehicle: np.ndarray  # (N, H, W, 3)
    obs_infra: np.ndarray
    distance: np.ndarray  # (N, H, W) normalised
    cls_target: np.ndarray  # (N, H, W)
    reg_target: np.ndarray  # (N, H, W, 6)
    boxes: list
    poses: list

    def __len__(self):
        return self.obs_vehicle.shape[0]


def make_batch(scenes, geometry):
    ov, oi, dist, cls, reg = [], [], [], [], []
    for s in scenes:
        ov.append(rasterize_view(s, "vehicle", geometry).grid)
        oi.append(rasterize_view(s, "infrastructure", geometry).grid)
        dist.append(normalized_distance(s.vehicle_pose, geometry))
        c, r, _ = build_targets(s.boxes(), geometry)
        cls.append(c)
        reg.append(r)
    return Batch(np.stack(ov), np.stack(oi), np.stack(dist), np.stack(cls), np.stack(reg),
                 [s.boxes() for s in scenes], [tuple(s.vehicle_pose) for s in scenes])


def subset(batch, idx):
    return Batch(batch.obs_vehicle[idx], batch.obs_infra[idx], batch.distance[idx],
                 batch.cls_target[idx], batch.reg_target[idx],
                 [batch.boxes[i] for i in idx], [batch.poses[i] for i in idx])


@dataclass
class TrainOutput:
    total: Tensor
    distortion: Tensor
    rate: Tensor  # bits per frame, batch mean, over rate_normalizer
    selected_fraction: float


def training_forward(params, batch, beta, rng, cfg: ModelConfig = ModelConfig(), rate_normalizer=1.0,
                     detach_rate=False):
    """D + beta * R with uniform-noise relaxation and straight-through selection.

    R counts feature bits at selected cells plus all hyper-latent bits,
    per frame (batch mean), divided by ``rate_normalizer``. With
    ``detach_rate`` the rate sees constant features and mask, so only the
    entropy model learns from it.
    """
    n = len(batch)
    with component("veh"):
        f_v = extract_features(batch.obs_vehicle, params, "veh")
    with component("inf"):
        f_i = extract_features(batch.obs_infra, params, "inf")
    with component("select"):
        scores = score_cells(f_i, batch.distance, params)
        mask = binarize_ste(scores, cfg.selection_threshold)
    f_r, m_r = (ops.stop_gradient(f_i), ops.stop_gradient(mask)) if detach_rate else (f_i, mask)
    with component("hyper_enc"):
        f_sel = apply_mask(f_r, m_r)
        z = hyper_encode(f_sel, params)
        z_t = ops.add_noise(z, uniform_noise(z.shape, rng))
    with component("hyper_dec"):
        mu, sigma = hyper_decode(z_t, params, cfg.sigma_min)
        u = uniform_noise(f_i.shape, rng)
        f_t = ops.add_noise(f_i, u)
        lik_f = gaussian_likelihood(ops.add_noise(f_r, u) if detach_rate else f_t, mu, sigma)
    with component("prior"):
        lik_z = factorized_likelihood(z_t, params)
    with component("select"):
        bits = ops.add(rate_estimate(lik_f, m_r), rate_estimate(lik_z))
        rate = ops.scale(bits, 1.0 / (n * rate_normalizer))
    with component("fusion"):
        fused = fuse(f_v, apply_mask(f_t, mask), mask, params)
    with component("det"):
        logits, reg = detector_heads(fused, params)
        distortion = detection_loss(logits, reg, batch.cls_target, batch.reg_target, cfg)
        total = ops.add(distortion, ops.scale(rate, beta))
    return TrainOutput(total, distortion, rate, float(mask.data.mean()))


# -- inference ----------------------------------------------------------------------

def entropy_models(params, cfg: ModelConfig = ModelConfig()):
    return EntropyModels(params, cfg.sigma_min)


def infrastructure_side(params, obs_infra, vehicle_pose, geometry, models, cfg: ModelConfig = ModelConfig(),
                        force_mask=None):
    """Quantise and encode one frame; returns the WireMessage.

    ``force_mask`` (H, W) overrides the learned selection, e.g. all ones
    for the full-transmission reference or all zeros.
    """
    f_i = extract_features(obs_infra[None], params, "inf")
    if force_mask is None:
        dist = normalized_distance(vehicle_pose, geometry)[None]
        scores = score_cells(f_i, dist, params).data[0, ..., 0]
        mask = (scores >= cfg.selection_threshold).astype(np.uint8)
    else:
        mask = (np.asarray(force_mask) != 0).astype(np.uint8)
    f_sel = Tensor(f_i.data * mask[None, ..., None])
    z_hat = quantize(hyper_encode(f_sel, params).data[0])
    f_hat = quantize(f_i.data[0])
    return encode_message(mask, z_hat, f_hat, models, pose=vehicle_pose)


def vehicle_side(params, obs_vehicle, message, models, geometry, cfg: ModelConfig = ModelConfig()):
    """Decode ``message`` (bytes or WireMessage), fuse and detect; returns a DetectionSet."""
    mask, _, f_hat = decode_message(message, models)
    f_v = extract_features(obs_vehicle[None], params, "veh")
    m = mask.astype(np.float64)[None, ..., None]
    fused = fuse(f_v, Tensor(f_hat.astype(np.float64)[None] * m), m, params)
    return detect(fused, params, geometry, cfg)[0]


def vehicle_only(params, obs_vehicle, geometry, cfg: ModelConfig = ModelConfig()):
    f_v = extract_features(obs_vehicle[None], params, "veh")
    return detect(fuse_vehicle_only(f_v, params), params, geometry, cfg)[0]


def rate_bits_quantized(params, obs_infra, vehicle_pose, geometry, cfg: ModelConfig = ModelConfig()):
    """Rate model's bit estimate for the quantised frame (feature + hyper), no relaxation."""
    f_i = extract_features(obs_infra[None], params, "inf")
    dist = normalized_distance(vehicle_pose, geometry)[None]
    mask = (score_cells(f_i, dist, params).data >= cfg.selection_threshold).astype(np.float64)
    z_hat = Tensor(quantize(hyper_encode(Tensor(f_i.data * mask), params).data))
    mu, sigma = hyper_decode(z_hat, params, cfg.sigma_min)
    f_hat = Tensor(quantize(f_i.data))
    bits_f = rate_estimate(gaussian_likelihood(f_hat, mu, sigma), mask).item()
    bits_z = rate_estimate(factorized_likelihood(z_hat, params)).item()
    return bits_f, bits_z

