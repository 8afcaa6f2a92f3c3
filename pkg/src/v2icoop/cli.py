"""Command line: train, eval, sweep, encode, decode, inspect-message."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .codec.wire import WireError, WireMessage, decode_message
from .harness.config import ConfigError, TrainConfig, load_config
from .harness.evaluate import evaluate
from .harness.sweep import load_sweep_config, records_to_csv, write_sweep
from .harness.train import TrainingError, as_tensors, load_params, save_result, train
from .model import entropy_models, infrastructure_side, vehicle_side
from .perception import detections_to_text
from .scene import generate_scene, grid_geometry_from_config, rasterize_view, scene_from_text


def _config(path):
    return load_config(path) if path else TrainConfig()


def _scene(args, cfg):
    geometry = grid_geometry_from_config(cfg.grid)
    if args.scene:
        with open(args.scene) as fh:
            return scene_from_text(fh.read()), geometry
    sc = dataclasses.replace(cfg.scene, force_occlusion=args.occlusion)
    return generate_scene(sc, geometry, args.scene_seed), geometry


def cmd_train(args):
    cfg = _config(args.config)
    result = train(cfg)
    digest = save_result(result, args.out)
    print(f"{digest}  {os.path.join(args.out, 'params.npz')}")


def cmd_eval(args):
    cfg = _config(args.config)
    rec = evaluate(load_params(args.params), cfg, mask_mode=args.mask)
    text = records_to_csv([rec])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_sweep(args):
    sc = load_sweep_config(args.config)
    if args.jobs is not None:
        sc = dataclasses.replace(sc, jobs=args.jobs)
    write_sweep(sc, args.out)
    with open(os.path.join(args.out, "sweep.csv")) as fh:
        sys.stdout.write(fh.read())


def cmd_encode(args):
    cfg = _config(args.config)
    scene, geometry = _scene(args, cfg)
    p = as_tensors(load_params(args.params))
    models = entropy_models(p, cfg.model)
    obs = rasterize_view(scene, "infrastructure", geometry).grid
    force = None if args.mask == "learned" else np.full(geometry.shape, 1.0 if args.mask == "all" else 0.0)
    msg = infrastructure_side(p, obs, scene.vehicle_pose, geometry, models, cfg.model, force_mask=force)
    with open(args.out, "wb") as fh:
        fh.write(msg.to_bytes())
    print(json.dumps(msg.header_dict(), sort_keys=True))


def cmd_decode(args):
    cfg = _config(args.config)
    scene, geometry = _scene(args, cfg)
    p = as_tensors(load_params(args.params))
    models = entropy_models(p, cfg.model)
    with open(args.message, "rb") as fh:
        data = fh.read()
    if args.features:
        mask, z, f = decode_message(data, models)
        np.savez(args.features, mask=mask, z_hat=z, f_hat=f)
    obs = rasterize_view(scene, "vehicle", geometry).grid
    sys.stdout.write(detections_to_text(vehicle_side(p, obs, data, models, geometry, cfg.model)))


def cmd_inspect(args):
    with open(args.message, "rb") as fh:
        msg = WireMessage.from_bytes(fh.read())
    print(json.dumps(msg.header_dict(), indent=2, sort_keys=True))


def _frame_args(p):
    p.add_argument("--config", help="JSON TrainConfig (defaults if omitted)")
    p.add_argument("--params", required=True, help="params.npz from train")
    p.add_argument("--scene", help="scene text file; otherwise generated from --scene-seed")
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--occlusion", action="store_true", help="force an occlusion pair in the generated scene")


def build_parser():
    ap = argparse.ArgumentParser(prog="v2icoop", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", help="JSON TrainConfig")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained parameters")
    p.add_argument("--config")
    p.add_argument("--params", required=True)
    p.add_argument("--mask", choices=("learned", "all", "none"), default="learned")
    p.add_argument("--out", help="write the CSV record here too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="beta sweep, writes sweep.csv and messages/")
    p.add_argument("--config", required=True, help="JSON with 'base' plus betas/seeds/jobs/cache_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("encode", help="encode one frame to a WireMessage")
    _frame_args(p)
    p.add_argument("--mask", choices=("learned", "all", "none"), default="learned")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a WireMessage and print fused detections")
    _frame_args(p)
    p.add_argument("--message", required=True)
    p.add_argument("--features", help="also save decoded mask/z_hat/f_hat to this .npz")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("inspect-message", help="print a WireMessage header and section sizes")
    p.add_argument("message")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, WireError, TrainingError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
