"""Experiment orchestration: multi-seed runs, sweeps, checkpoint jobs.

Every job executor takes a plain payload dict (what the service request
models validate and the CLI assembles) and returns a dict with the list
of declared output files plus a machine-readable summary. A job is only
successful if every declared output exists on disk.
"""

from __future__ import annotations

import dataclasses
import time
from pathlib import Path

import numpy as np

from .analysis import compute_assignment_table, hidden_features
from .buffer import ReplayBuffer
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, build_config, load_config_file
from .records import write_csv, write_json
from .seeding import SeedStreams
from .trainer import (Ensemble, collect_trajectories, evaluate_generalization,
                      run_outer_loop)

SWEEP_AXES = {"H": "heads", "M": "segment_size", "N": "selection_horizon"}


def config_from_payload(payload: dict) -> ExperimentConfig:
    file_values = {}
    if payload.get("config_file"):
        file_values = load_config_file(payload["config_file"])
    return build_config(preset=payload.get("preset"),
                        file_values=file_values,
                        overrides=payload.get("overrides") or {})


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train every configured seed; aggregate across seeds at the top level."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", {"config": cfg.to_dict()})
    outputs = [out / "config.json"]
    records = []
    for seed in cfg.seeds:
        record = run_outer_loop(cfg, seed, out / f"seed_{seed}")
        records.append(record)
        outputs.extend(Path(record.out_dir) / name
                       for name in ("config.json", "metrics.csv",
                                    "assignments.csv", "summary.json",
                                    "checkpoint/manifest.json",
                                    "checkpoint/params.bin"))
    finals = [r.final_test_return for r in records]
    valid = [f for f in finals if f is not None]
    purities = [p for p in (r.final_mean_purity() for r in records) if p is not None]
    summary = {
        "env": cfg.env,
        "seeds": list(cfg.seeds),
        "final_test_return_per_seed": finals,
        "final_test_return_mean": float(np.mean(valid)) if valid else None,
        "final_test_return_std": float(np.std(valid)) if valid else None,
        "final_mean_purity": float(np.mean(purities)) if purities else None,
        "runs": [str(r.out_dir) for r in records],
    }
    write_json(out / "summary.json", summary)
    outputs.append(out / "summary.json")
    return {"outputs": [str(p) for p in outputs], "summary": summary}


def job_run(payload: dict) -> dict:
    cfg = config_from_payload(payload)
    return run_experiment(cfg)


def run_sweep(cfg: ExperimentConfig, axis: str, values: list[int]) -> dict:
    """One run per (value, seed) cell; a failed cell is recorded, not fatal."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    field = SWEEP_AXES[axis]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json",
               {"config": cfg.to_dict(), "axis": axis, "values": list(values)})
    header = ["axis", "value", "seed", "status", "final_test_return_mean",
              "final_test_return_std", "mean_purity", "run_dir", "error"]
    rows = []
    for value in values:
        cell_cfg = dataclasses.replace(cfg, **{field: int(value)})
        for seed in cfg.seeds:
            run_dir = out / f"{axis}_{value}" / f"seed_{seed}"
            try:
                cell_cfg.validate()
                record = run_outer_loop(cell_cfg, seed, run_dir)
                last = record.iterations[-1]
                rows.append([axis, value, seed, "ok", last.test_return_mean,
                             last.test_return_std, record.final_mean_purity(),
                             str(run_dir), ""])
            except Exception as exc:  # keep sweeping past broken cells
                rows.append([axis, value, seed, "failed", None, None, None,
                             str(run_dir), f"{type(exc).__name__}: {exc}"])
    write_csv(out / "sweep.csv", header, rows)
    ok = sum(1 for r in rows if r[3] == "ok")
    summary = {"axis": axis, "values": list(values), "cells": len(rows),
               "ok": ok, "failed": len(rows) - ok}
    write_json(out / "summary.json", summary)
    outputs = [out / "config.json", out / "sweep.csv", out / "summary.json"]
    return {"outputs": [str(p) for p in outputs], "summary": summary}


def job_sweep(payload: dict) -> dict:
    cfg = config_from_payload(payload)
    return run_sweep(cfg, payload["axis"], [int(v) for v in payload["values"]])


def _load_for_inference(payload: dict):
    models, meta = load_checkpoint(payload["checkpoint"])
    overrides = dict(meta.get("config", {}))
    overrides.pop("output_dir", None)
    for key in ("non_adaptive_planning",):
        if payload.get(key) is not None and key in payload:
            overrides[key] = payload[key]
    cfg = build_config(overrides=overrides)
    ensemble = Ensemble(models, [])
    return cfg, ensemble, meta


def _job_out_dir(payload: dict, default_name: str) -> Path:
    if payload.get("output_dir"):
        out = Path(payload["output_dir"])
    else:
        out = Path(payload["checkpoint"]).parent / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def job_eval(payload: dict) -> dict:
    """Episode returns of a frozen checkpoint on fresh contexts."""
    cfg, ensemble, meta = _load_for_inference(payload)
    split = payload.get("split", "test")
    episodes = int(payload.get("episodes", 10))
    seed = int(payload.get("seed", 0))
    streams = SeedStreams(seed)
    start = time.time()
    result = evaluate_generalization(cfg, ensemble, streams, "eval", episodes,
                                     split=split)
    out = _job_out_dir(payload, "eval")
    write_csv(out / "eval.csv", ["episode", "return"],
              [[i, r] for i, r in enumerate(result.returns)])
    summary = {"checkpoint": str(payload["checkpoint"]), "split": split,
               "episodes": episodes, "seed": seed, "empty": result.empty,
               "return_mean": result.mean, "return_std": result.std,
               "elapsed_seconds": time.time() - start}
    write_json(out / "eval.json", summary)
    outputs = [out / "eval.csv", out / "eval.json"]
    return {"outputs": [str(p) for p in outputs], "summary": summary}


def _collect_for_checkpoint(cfg, ensemble, split: str, episodes: int, seed: int):
    buffer = ReplayBuffer()
    streams = SeedStreams(seed)
    collect_trajectories(cfg, ensemble, streams, "probe", 0, episodes,
                         split=split, buffer=buffer)
    return buffer


def job_assignments(payload: dict) -> dict:
    """Head-assignment table of a frozen checkpoint on fresh labeled episodes."""
    cfg, ensemble, meta = _load_for_inference(payload)
    split = payload.get("split", "train")
    episodes = int(payload.get("episodes", 8))
    seed = int(payload.get("seed", 0))
    buffer = _collect_for_checkpoint(cfg, ensemble, split, episodes, seed)
    out = _job_out_dir(payload, "assignments")
    header = (["member", "parameter", "segments"]
              + [f"head_{h}" for h in range(cfg.heads)])
    rows = []
    purities = []
    for m, model in enumerate(ensemble.members):
        table = compute_assignment_table(model, buffer, cfg.segment_size)
        purities.append(table.mean_purity())
        for i, param in enumerate(table.parameters):
            rows.append([m, param, int(table.counts[i]), *table.fractions[i]])
    write_csv(out / "assignments.csv", header, rows)
    summary = {"checkpoint": str(payload["checkpoint"]), "split": split,
               "episodes": episodes, "seed": seed,
               "mean_purity": float(np.mean(purities))}
    write_json(out / "assignments.json", summary)
    outputs = [out / "assignments.csv", out / "assignments.json"]
    return {"outputs": [str(p) for p in outputs], "summary": summary}


def job_export_features(payload: dict) -> dict:
    """Hidden-feature CSV (backbone activation ++ context code) per transition."""
    cfg, ensemble, meta = _load_for_inference(payload)
    split = payload.get("split", "train")
    episodes = int(payload.get("episodes", 4))
    seed = int(payload.get("seed", 0))
    buffer = _collect_for_checkpoint(cfg, ensemble, split, episodes, seed)
    model = ensemble.members[0]
    feats, labels, traj_ids, steps = hidden_features(model, buffer)
    out = _job_out_dir(payload, "features")
    backbone_dim = model.backbone.out_dim
    header = (["parameter", "trajectory", "step"]
              + [f"feature_{i}" for i in range(backbone_dim)]
              + [f"context_{i}" for i in range(feats.shape[1] - backbone_dim)])
    rows = [[labels[i], int(traj_ids[i]), int(steps[i]), *feats[i]]
            for i in range(feats.shape[0])]
    write_csv(out / "features.csv", header, rows)
    summary = {"checkpoint": str(payload["checkpoint"]), "split": split,
               "episodes": episodes, "seed": seed, "rows": len(rows),
               "columns": len(header)}
    write_json(out / "features.json", summary)
    outputs = [out / "features.csv", out / "features.json"]
    return {"outputs": [str(p) for p in outputs], "summary": summary}


JOB_EXECUTORS = {
    "run": job_run,
    "sweep": job_sweep,
    "eval": job_eval,
    "assignments": job_assignments,
    "export-features": job_export_features,
}


def execute_job(kind: str, payload: dict) -> dict:
    try:
        executor = JOB_EXECUTORS[kind]
    except KeyError:
        raise ValueError(f"unknown job kind {kind!r}") from None
    result = executor(payload)
    missing = [p for p in result["outputs"] if not Path(p).exists()]
    if missing:
        raise RuntimeError(f"job finished but outputs are missing: {missing}")
    return result
