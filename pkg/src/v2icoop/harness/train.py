"""Joint rate-distortion training."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..model import ComponentError, component_of, init_params, make_batch, subset, training_forward
from ..nn import OptimizerError, Tape, Tensor
from ..nn.optim import Adam
from ..scene import SceneError, generate_scene, grid_geometry_from_config
from .config import TrainConfig

log = logging.getLogger(__name__)

TRAIN_SEED_STRIDE = 1_000_000
HISTORY_FIELDS = ("step", "beta", "total", "distortion", "rate", "selected_fraction")


class TrainingError(FloatingPointError):
    def __init__(self, step, component, detail):
        super().__init__(f"training diverged at step {step} in {component}: {detail}")
        self.step = step
        self.component = component


@dataclass
class TrainResult:
    params: dict  # name -> ndarray
    history: list  # dicts with HISTORY_FIELDS
    config: TrainConfig

    @property
    def digest(self):
        return params_digest(self.params)


def params_digest(params):
    h = hashlib.sha256()
    for k in sorted(params):
        a = params[k].data if isinstance(params[k], Tensor) else params[k]
        h.update(k.encode())
        h.update(str(a.shape).encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def save_params(path, params):
    arrays = {k: (v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, **dict(sorted(arrays.items())))
    return params_digest(arrays)


def load_params(path):
    with np.load(path) as z:
        return {k: z[k].copy() for k in z.files}


def as_tensors(params):
    """Fresh Tensor copies of a parameter dict (arrays or Tensors)."""
    return {k: Tensor(np.array(getattr(v, "data", v), dtype=np.float64), requires_grad=True, name=k)
            for k, v in params.items()}


def scene_list(count, occlusion_fraction, seed_base, scene_cfg, geometry):
    """``count`` scenes; the first round(fraction * count) force an occlusion.

    Seeds run upward from ``seed_base``; a seed whose placement fails is
    skipped, deterministically.
    """
    forced = int(round(occlusion_fraction * count))
    scenes, seed = [], seed_base
    while len(scenes) < count:
        sc = dataclasses.replace(scene_cfg, force_occlusion=len(scenes) < forced)
        try:
            scenes.append(generate_scene(sc, geometry, seed))
        except SceneError:
            pass
        seed += 1
    return scenes


def training_scenes(cfg: TrainConfig):
    geometry = grid_geometry_from_config(cfg.grid)
    base = TRAIN_SEED_STRIDE * (cfg.seed + 1)
    return scene_list(cfg.train_scenes, cfg.occlusion_fraction, base, cfg.scene, geometry), geometry


def train(cfg: TrainConfig, progress=None):
    """Train every component against D + beta * R; deterministic given ``cfg``."""
    scenes, geometry = training_scenes(cfg)
    data = make_batch(scenes, geometry)
    params = init_params(cfg.seed, cfg.model)
    scale = {k: cfg.selection_lr_scale for k in params if component_of(k) == "select"} if cfg.selection_lr_scale != 1 else {}
    opt = Adam(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay, lr_scale=scale)
    sampler = np.random.default_rng([cfg.seed, 1])
    noise = np.random.default_rng([cfg.seed, 2])
    history = []
    n = len(data)
    for step in range(cfg.steps):
        idx = sampler.choice(n, size=min(cfg.batch_size, n), replace=False)
        beta = cfg.beta_at(step)
        try:
            with Tape() as tape:
                out = training_forward(params, subset(data, idx), beta, noise, cfg.model, cfg.rate_normalizer,
                                       detach_rate=cfg.in_warmup(step))
                grads = tape.backward(out.total, params)
            opt.step(params, grads)
        except ComponentError as e:
            raise TrainingError(step, e.component, str(e)) from None
        except OptimizerError as e:
            raise TrainingError(step, component_of(e.param) if e.param else "optimizer", str(e)) from None
        rec = {"step": step, "beta": beta, "total": out.total.item(), "distortion": out.distortion.item(),
               "rate": out.rate.item(), "selected_fraction": out.selected_fraction}
        history.append(rec)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.info("beta=%g seed=%d step %d: total %.4f D %.4f R %.1f sel %.3f", cfg.beta, cfg.seed, step,
                     rec["total"], rec["distortion"], rec["rate"], rec["selected_fraction"])
            if progress:
                progress(rec)
    return TrainResult({k: v.data.copy() for k, v in params.items()}, history, cfg)


def save_result(result: TrainResult, directory):
    os.makedirs(directory, exist_ok=True)
    digest = save_params(os.path.join(directory, "params.npz"), result.params)
    with open(os.path.join(directory, "params.sha256"), "w") as fh:
        fh.write(digest + "\n")
    with open(os.path.join(directory, "history.json"), "w") as fh:
        json.dump(result.history, fh)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(result.config.to_dict(), fh, indent=2, sort_keys=True)
    return digest


def load_result(directory, cfg: TrainConfig):
    params = load_params(os.path.join(directory, "params.npz"))
    with open(os.path.join(directory, "params.sha256")) as fh:
        expected = fh.read().strip()
    if params_digest(params) != expected:
        raise ValueError(f"{directory}: parameter hash mismatch")
    with open(os.path.join(directory, "history.json")) as fh:
        history = json.load(fh)
    return TrainResult(params, history, cfg)


def train_cached(cfg: TrainConfig, cache_dir=None):
    """Train, or reuse a result stored under ``cache_dir/<config digest>``."""
    if cache_dir is None:
        return train(cfg)
    path = os.path.join(cache_dir, cfg.digest()[:16])
    if os.path.exists(os.path.join(path, "params.sha256")):
        return load_result(path, cfg)
    result = train(cfg)
    save_result(result, path)
    return result
