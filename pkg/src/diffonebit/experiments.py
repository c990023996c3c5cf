"""Simulation, recovery trials and parameter sweeps driven by an ExperimentConfig."""

import csv
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from . import __version__
from .errors import InvalidArgument, NumericalFailure
from .evaluation import MetricReport, compute_metrics, grid_map_search
from .likelihood import DataFidelity
from .measurement import (
    Problem,
    gaussian_operator,
    mask_operator,
    quantize_onebit,
    sample_logistic,
    write_vector_csv,
)
from .prior import gmm_sample, load_mixture
from .rng import RNG_ALGORITHM, derive_seed
from .schedule import build_schedule, plan_timesteps
from .sampler import diff_onebit

METRICS = ("psnr", "ssim", "cosine", "norm_rel_error", "sign_consistency")
SWEEP_AXES = ("lambda", "sigma", "nfe", "zeta", "measurements")


def simulate(cfg, prior, instance=0):
    """Draw a ground truth from the prior and acquire it per ``cfg.task``."""
    if prior.dim != cfg.n:
        raise InvalidArgument(f"prior has N={prior.dim}, config has n={cfg.n}")
    s_truth = derive_seed(cfg.seed, cfg.task, "truth", instance)
    s_op = derive_seed(cfg.seed, cfg.task, "operator", instance)
    s_obs = derive_seed(cfg.seed, cfg.task, "observation", instance)
    x = gmm_sample(prior, s_truth)
    if cfg.task == "onebit_inpainting":
        op = mask_operator(s_op, cfg.mask_ratio, cfg.n)
    else:
        op = gaussian_operator(s_op, cfg.m_effective, cfg.n)
    if cfg.task == "logistic":
        obs = sample_logistic(op, x, s_obs)
    else:
        obs = quantize_onebit(op, x, cfg.sigma, s_obs)
    meta = {"task": cfg.task, "instance": instance, "rng_algorithm": RNG_ALGORITHM, **cfg.provenance()}
    if cfg.image_shape is not None:
        meta["image_shape"] = list(cfg.image_shape)
    return Problem(op, obs, x, meta)


def fidelity_for(cfg, obs):
    return DataFidelity.matching(obs, cfg.fidelity_sigma)


def recover(problem, cfg, prior, seed):
    plan = plan_timesteps(build_schedule(cfg.T, cfg.beta_min, cfg.beta_max), cfg.nfe, cfg.lam_effective)
    fid = fidelity_for(cfg, problem.observation)
    return diff_onebit(problem.observation, problem.operator, prior, plan, fid, cfg.recovery(seed))


@dataclass
class TrialRecord:
    trial: int
    seed: int
    metrics: MetricReport
    wall_time: float
    config_hash: str
    extra: dict = None

    def to_json(self):
        d = {
            "trial": self.trial,
            "seed": self.seed,
            "metrics": self.metrics.to_dict(),
            "wall_time": self.wall_time,
            "config_hash": self.config_hash,
            "tool_version": __version__,
        }
        if self.extra:
            d.update(self.extra)
        return json.dumps(d, sort_keys=True)


def _run_recovery_trial(problem, cfg, prior, trial):
    seed = cfg.seed + trial
    t0 = time.perf_counter()
    try:
        x_hat, trace = recover(problem, cfg, prior, seed)
    except NumericalFailure as exc:
        exc.trial = trial
        raise
    elapsed = time.perf_counter() - t0
    metrics = None
    if problem.truth is not None:
        metrics = compute_metrics(
            problem.operator, problem.observation, x_hat, problem.truth, cfg.data_range, cfg.image_shape
        )
    return trial, seed, x_hat, trace, metrics, elapsed


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_recovery(problem, cfg, prior, out_dir):
    """Run ``cfg.trials`` recoveries of one problem with seeds ``seed + i``.

    Writes ``recon_trialNNN.csv`` and ``trace_trialNNN.csv`` per trial and one
    ``metrics.jsonl`` line per trial (when ground truth is present).
    Returns the list of TrialRecords.
    """
    os.makedirs(out_dir, exist_ok=True)
    prov = cfg.provenance()
    fn = partial(_run_recovery_trial, problem, cfg, prior)
    results = _map(fn, range(cfg.trials), cfg.workers)
    records = []
    for trial, seed, x_hat, trace, metrics, elapsed in results:
        header = {**prov, "trial": trial, "seed": seed}
        write_vector_csv(os.path.join(out_dir, f"recon_trial{trial:03d}.csv"), x_hat, header)
        trace.write_csv(os.path.join(out_dir, f"trace_trial{trial:03d}.csv"), header)
        if metrics is not None:
            records.append(TrialRecord(trial, seed, metrics, elapsed, prov["config_hash"]))
    if records:
        with open(os.path.join(out_dir, "metrics.jsonl"), "w") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump({**prov, "config": cfg.to_dict(), "trials": cfg.trials}, fh, indent=2, sort_keys=True)
    return records


# --- sweeps ----------------------------------------------------------------


def _apply_axis(cfg, axis, value):
    if axis == "lambda":
        return replace(cfg, lam=float(value))
    if axis == "sigma":
        return replace(cfg, sigma=float(value))
    if axis == "nfe":
        return replace(cfg, nfe=int(value))
    if axis == "zeta":
        return replace(cfg, zeta=float(value))
    if axis == "measurements":
        if cfg.task == "onebit_inpainting":
            return replace(cfg, mask_ratio=float(value))
        return replace(cfg, m=int(value))
    raise InvalidArgument(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def _sweep_job(prior, job):
    cfg, axis, value, trial = job
    problem = simulate(cfg, prior, instance=trial)
    seed = cfg.seed + trial
    t0 = time.perf_counter()
    try:
        x_hat, _ = recover(problem, cfg, prior, seed)
    except NumericalFailure as exc:
        exc.trial = trial
        raise
    elapsed = time.perf_counter() - t0
    metrics = compute_metrics(problem.operator, problem.observation, x_hat, problem.truth, cfg.data_range, cfg.image_shape)
    return axis, value, trial, seed, metrics, elapsed


def sweep(cfg, prior, axis, values):
    """Run ``cfg.trials`` fresh instances for every axis value.

    Instance ``i`` uses the same seeds at every value, so rows are paired
    across the sweep. Returns (trial_rows, aggregate_rows) as dicts.
    """
    values = list(values)
    if not values:
        raise InvalidArgument("sweep needs at least one value")
    if axis not in SWEEP_AXES:
        raise InvalidArgument(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    cfgs = [_apply_axis(cfg, axis, v).validate(check_files=False) for v in values]
    jobs = [(c, axis, v, t) for c, v in zip(cfgs, values) for t in range(cfg.trials)]
    results = _map(partial(_sweep_job, prior), jobs, cfg.workers)
    rows = []
    for axis_, value, trial, seed, metrics, elapsed in results:
        row = {"kind": "trial", "axis": axis_, "value": value, "trial": trial, "seed": seed, "wall_time": elapsed}
        row.update({k: getattr(metrics, k) for k in METRICS})
        rows.append(row)
    return rows, aggregate(rows, values)


def aggregate(rows, values):
    """Mean and sample standard deviation of each metric per axis value."""
    out = []
    for value in values:
        sel = [r for r in rows if r["value"] == value]
        agg = {"kind": "aggregate", "axis": sel[0]["axis"], "value": value, "trial": len(sel), "seed": ""}
        for key in METRICS + ("wall_time",):
            vals = [r[key] for r in sel if r[key] is not None]
            if not vals:
                agg[key], agg[f"{key}_std"] = None, None
                continue
            agg[key] = statistics.fmean(vals)
            agg[f"{key}_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append(agg)
    return out


SWEEP_COLUMNS = ["kind", "axis", "value", "trial", "seed"] + [
    c for k in METRICS + ("wall_time",) for c in (k, f"{k}_std")
]


def write_sweep_csv(path, rows, aggregates, header=None):
    with open(path, "w", newline="") as fh:
        for key, val in (header or {}).items():
            fh.write(f"# {key}={val}\n")
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, restval="")
        writer.writeheader()
        for row in list(rows) + list(aggregates):
            writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in row.items()})


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --- oracle ----------------------------------------------------------------


def oracle_report(problem, prior, fidelity, bounds, resolution):
    """Grid-MAP minimizer plus a resolution-doubling consistency check."""
    coarse = grid_map_search(problem.observation, problem.operator, prior, fidelity, bounds, resolution)
    fine = grid_map_search(problem.observation, problem.operator, prior, fidelity, bounds, 2 * resolution - 1)
    shift_cells = np.abs(fine.x - coarse.x) / coarse.cell
    return {
        "argmin": coarse.x.tolist(),
        "objective": coarse.objective,
        "objective_max": coarse.objective_max,
        "resolution": int(resolution),
        "cell": coarse.cell.tolist(),
        "bounds": [[float(a[0]), float(a[-1])] for a in coarse.axes],
        "fidelity": fidelity.family,
        "refinement": {
            "resolution": 2 * resolution - 1,
            "argmin": fine.x.tolist(),
            "objective": fine.objective,
            "shift_in_coarse_cells": float(shift_cells.max()),
            "consistent": bool(shift_cells.max() < 2),
        },
    }


def load_prior(path):
    return load_mixture(path)
