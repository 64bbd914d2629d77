"""Run records and their on-disk forms: CSV metrics, JSON config/summary.

Files are rewritten whole after every outer iteration, so a crashed run
still leaves well-formed partial records behind. Floats are written with
repr (shortest round-trip), which keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import AssignmentTable

RUN_OUTPUTS = ("config.json", "metrics.csv", "assignments.csv",
               "checkpoint/manifest.json", "checkpoint/params.bin",
               "summary.json")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows: list[list]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class IterationRecord:
    iteration: int
    loss_kind: str
    member_losses: list[float]
    train_return_mean: float
    train_return_std: float
    test_return_mean: float | None
    test_return_std: float | None
    n_transitions: int
    tables: list[AssignmentTable] = field(default_factory=list)


@dataclass
class RunRecord:
    seed: int
    config: dict
    out_dir: str
    iterations: list[IterationRecord] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def final_test_return(self):
        for rec in reversed(self.iterations):
            if rec.test_return_mean is not None:
                return rec.test_return_mean
        return None

    def final_mean_purity(self):
        for rec in reversed(self.iterations):
            if rec.tables:
                return float(np.mean([t.mean_purity() for t in rec.tables]))
        return None


class RunWriter:
    """Incrementally materializes a RunRecord under one directory."""

    def __init__(self, out_dir, config: dict, seed: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.record = RunRecord(seed=seed, config=config, out_dir=str(self.out_dir))
        write_json(self.out_dir / "config.json", {"seed": seed, "config": config})

    def add_iteration(self, rec: IterationRecord):
        self.record.iterations.append(rec)
        self._flush()

    def _flush(self):
        members = len(self.record.iterations[0].member_losses) \
            if self.record.iterations else 0
        header = (["iteration", "loss_kind"]
                  + [f"loss_member_{m}" for m in range(members)]
                  + ["train_return_mean", "train_return_std",
                     "test_return_mean", "test_return_std", "buffer_transitions"])
        rows = []
        for rec in self.record.iterations:
            rows.append([rec.iteration, rec.loss_kind, *rec.member_losses,
                         rec.train_return_mean, rec.train_return_std,
                         rec.test_return_mean, rec.test_return_std,
                         rec.n_transitions])
        write_csv(self.out_dir / "metrics.csv", header, rows)
        self._flush_assignments()

    def _flush_assignments(self):
        heads = self.record.config.get("heads", 0)
        header = (["iteration", "member", "parameter", "segments"]
                  + [f"head_{h}" for h in range(heads)])
        rows = []
        for rec in self.record.iterations:
            for m, table in enumerate(rec.tables):
                for i, param in enumerate(table.parameters):
                    rows.append([rec.iteration, m, param, int(table.counts[i]),
                                 *table.fractions[i]])
        write_csv(self.out_dir / "assignments.csv", header, rows)

    def finish(self, elapsed: float, extra: dict | None = None) -> RunRecord:
        self.record.elapsed_seconds = elapsed
        summary = {
            "seed": self.record.seed,
            "env": self.record.config.get("env"),
            "iterations_completed": len(self.record.iterations),
            "final_test_return_mean": self.record.final_test_return,
            "final_mean_purity": self.record.final_mean_purity(),
            "elapsed_seconds": elapsed,
            "outputs": list(RUN_OUTPUTS),
        }
        if extra:
            summary.update(extra)
        write_json(self.out_dir / "summary.json", summary)
        return self.record
