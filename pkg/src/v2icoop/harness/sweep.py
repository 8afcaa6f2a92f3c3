"""Beta sweep: train and evaluate each beta over several seeds, write the tradeoff CSV.

CSV header (one row per beta, then two reference rows)::

    label,beta,seeds,status,n_scenes,bytes_total,bytes_header,bytes_mask,
    bytes_hyper,bytes_feature,ap50,ap30,vehicle_only_ap50,vehicle_only_ap30,
    delay_s,selected_fraction,estimate_bytes,early_fusion_bytes,messages_sha256

``label`` is ``fused`` for data rows, ``vehicle_only`` and
``full_transmission`` for the reference rows (built from the models of
the smallest beta). Byte columns are means over eval frames and seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .config import ConfigError, TrainConfig, config_from_dict, read_json
from .evaluate import ExperimentRecord, aggregate, early_fusion_bytes, evaluation_scenes, run_frames
from .train import train_cached

log = logging.getLogger(__name__)

CSV_FIELDS = tuple(f.name for f in dataclasses.fields(ExperimentRecord))


@dataclass(frozen=True)
class SweepConfig:
    base: TrainConfig
    betas: tuple = (1e-4, 1e-3, 1e-2)
    seeds: tuple = (0, 1, 2)
    jobs: int = 1
    cache_dir: str = None

    def configs(self):
        return [[self.base.replace(beta=float(b), seed=int(s)) for s in self.seeds] for b in self.betas]


def load_sweep_config(path, env=None):
    """JSON with ``base`` (TrainConfig keys) plus optional ``betas``, ``seeds``, ``jobs``, ``cache_dir``."""
    data = read_json(path)
    if not isinstance(data, dict) or "base" not in data:
        raise ConfigError(f"{path}: sweep config needs a 'base' object")
    unknown = sorted(set(data) - {"base", "betas", "seeds", "jobs", "cache_dir"})
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    base = config_from_dict(data["base"], env)
    kw = {k: tuple(data[k]) for k in ("betas", "seeds") if k in data}
    if "seeds" not in kw:
        kw["seeds"] = (base.seed,)
    return SweepConfig(base, jobs=int(data.get("jobs", 1)), cache_dir=data.get("cache_dir"), **kw)


def _train_one(args):
    cfg, cache_dir = args
    return train_cached(cfg, cache_dir)


def _failed(label, beta, seeds, err):
    return ExperimentRecord(label=label, beta=float(beta), seeds=tuple(seeds),
                            status=f"failed: {type(err).__name__}: {err}".replace("\n", " "))


def sweep(sc: SweepConfig, message_dir=None):
    """Records for every beta plus the two reference rows; runs continue past failures."""
    grid = sc.configs()
    flat = [(c, sc.cache_dir) for row in grid for c in row]
    results = {}
    if sc.jobs > 1:
        with ProcessPoolExecutor(max_workers=sc.jobs) as pool:
            futures = [pool.submit(_train_one, a) for a in flat]
            for a, f in zip(flat, futures):
                try:
                    results[(a[0].beta, a[0].seed)] = f.result()
                except Exception as e:  # recorded, sweep continues
                    results[(a[0].beta, a[0].seed)] = e
    else:
        for a in flat:
            try:
                results[(a[0].beta, a[0].seed)] = _train_one(a)
            except Exception as e:
                results[(a[0].beta, a[0].seed)] = e

    scenes, geometry = evaluation_scenes(sc.base)
    anchor = early_fusion_bytes(scenes, geometry)
    records, first_runs = [], None
    for row in grid:
        beta = row[0].beta
        seeds = [c.seed for c in row]
        try:
            runs = []
            for c in row:
                res = results[(c.beta, c.seed)]
                if isinstance(res, Exception):
                    raise res
                runs.append(run_frames(res.params, c, "learned", scenes, geometry))
            rec = aggregate("fused", beta, seeds, runs, sc.base.link)
            _save_messages(message_dir, f"fused_beta{beta:g}", runs, sc.base.eval.save_messages)
            if first_runs is None:
                first_runs = (row, runs)
        except Exception as e:
            log.warning("beta %g failed: %s", beta, e)
            rec = _failed("fused", beta, seeds, e)
        rec.early_fusion_bytes = anchor
        records.append(rec)

    if first_runs is None:
        err = RuntimeError("no beta produced a trained model")
        refs = [_failed("vehicle_only", 0.0, sc.seeds, err), _failed("full_transmission", 0.0, sc.seeds, err)]
    else:
        row, runs = first_runs
        beta, seeds = row[0].beta, [c.seed for c in row]
        vo = aggregate("vehicle_only", beta, seeds, runs, sc.base.link, use_vehicle=True)
        try:
            full_runs = [run_frames(results[(c.beta, c.seed)].params, c, "all", scenes, geometry) for c in row]
            full = aggregate("full_transmission", beta, seeds, full_runs, sc.base.link)
            _save_messages(message_dir, f"full_beta{beta:g}", full_runs, sc.base.eval.save_messages)
        except Exception as e:
            full = _failed("full_transmission", beta, seeds, e)
        refs = [vo, full]
    for r in refs:
        r.early_fusion_bytes = anchor
    return records + refs


def _save_messages(directory, stem, runs, count):
    """Length-prefixed (u32 little-endian) WireMessages of the first ``count`` frames per seed."""
    if not directory or count <= 0:
        return
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, stem + ".bin"), "wb") as fh:
        for r in runs:
            for m in r.messages[:count]:
                fh.write(len(m).to_bytes(4, "little"))
                fh.write(m)


def read_messages(path):
    with open(path, "rb") as fh:
        data = fh.read()
    out, pos = [], 0
    while pos < len(data):
        n = int.from_bytes(data[pos:pos + 4], "little")
        out.append(data[pos + 4:pos + 4 + n])
        pos += 4 + n
    return out


# -- CSV ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, tuple):
        return ";".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def records_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header: {rows[0] if rows else None}")
    types = {f.name: f.type for f in dataclasses.fields(ExperimentRecord)}
    out = []
    for row in rows[1:]:
        kw = {}
        for name, val in zip(CSV_FIELDS, row):
            t = types[name]
            if t == "tuple":
                kw[name] = tuple(int(x) for x in val.split(";") if x)
            elif t == "float":
                kw[name] = float(val)
            elif t == "int":
                kw[name] = int(val)
            else:
                kw[name] = val
        out.append(ExperimentRecord(**kw))
    return out


def records_equal(a, b):
    """Field-wise equality treating NaN as equal to NaN."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for f in CSV_FIELDS:
            u, v = getattr(x, f), getattr(y, f)
            if isinstance(u, float) and isinstance(v, float) and math.isnan(u) and math.isnan(v):
                continue
            if u != v:
                return False
    return True


def write_sweep(sc: SweepConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    records = sweep(sc, os.path.join(out_dir, "messages"))
    text = records_to_csv(records)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        fh.write(text)
    return records
