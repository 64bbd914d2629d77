"""Experiment configuration, presets and the key=value config file format.

Precedence, lowest to highest: dataclass defaults, preset, config file,
explicit overrides (CLI flags or request fields).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .envs import FAMILIES


@dataclass
class ExperimentConfig:
    env: str = "toymodes"
    # model
    heads: int = 3
    segment_size: int = 10
    selection_horizon: int = 10
    history_length: int = 10
    ensemble_size: int = 5
    hidden_width: int = 200
    context_dim: int = 10
    # planner
    cem_candidates: int = 200
    cem_iterations: int = 5
    plan_horizon: int = 30
    elite_frac: float = 0.1
    particles: int = 20
    warm_start: bool = True
    cem_std_floor: float = 1e-3
    # training schedule
    iterations: int = 10
    warmup_iterations: int = 3
    trajectories_per_iteration: int = 10
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    lambda_aux: float = 1.0
    eval_episodes: int = 10
    seeds: tuple = (0, 1, 2)
    # ablation flags
    multi_head_no_mcl: bool = False
    non_adaptive_planning: bool = False
    no_context: bool = False
    # env extras
    env_noise: float = 0.01
    # outputs
    output_dir: str = "runs/out"

    def validate(self) -> "ExperimentConfig":
        if self.env not in FAMILIES:
            raise ValueError(f"unknown env {self.env!r}")
        positive = ["heads", "segment_size", "selection_horizon", "history_length",
                    "ensemble_size", "hidden_width", "cem_candidates",
                    "cem_iterations", "plan_horizon", "particles", "iterations",
                    "trajectories_per_iteration", "batch_size"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_iterations < 0 or self.epochs < 0 or self.eval_episodes < 0:
            raise ValueError("warmup_iterations/epochs/eval_episodes must be >= 0")
        if not (0.0 < self.elite_frac <= 1.0):
            raise ValueError("elite_frac must be in (0, 1]")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_aux < 0.0:
            raise ValueError("lambda_aux must be >= 0")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.segment_size > FAMILIES[self.env].horizon:
            raise ValueError("segment_size exceeds the episode length")
        if self.no_context and self.lambda_aux != 0.0:
            # Auxiliary losses only exist to shape the encoder.
            self.lambda_aux = 0.0
        return self

    @property
    def context_enabled(self) -> bool:
        return not self.no_context and self.context_dim > 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d


PRESETS = {
    # Full-scale settings; hours of compute on a workstation.
    "paper": {},
    # Same semantics, sized for a laptop.
    "desk": {
        "cem_candidates": 50,
        "particles": 4,
        "ensemble_size": 2,
        "plan_horizon": 15,
        "hidden_width": 64,
    },
    # Seconds-scale smoke run for CI and reproducibility checks.
    "smoke": {
        "env": "toymodes",
        "heads": 2,
        "segment_size": 5,
        "selection_horizon": 5,
        "history_length": 4,
        "ensemble_size": 2,
        "hidden_width": 16,
        "context_dim": 6,
        "cem_candidates": 16,
        "cem_iterations": 2,
        "plan_horizon": 8,
        "elite_frac": 0.2,
        "particles": 2,
        "iterations": 2,
        "warmup_iterations": 1,
        "trajectories_per_iteration": 3,
        "epochs": 3,
        "batch_size": 16,
        "eval_episodes": 2,
        "seeds": (0,),
    },
}

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ValueError(f"unknown config key {name!r}")
    if isinstance(value, str):
        value = _parse_scalar(name, value)
    if name == "seeds":
        if isinstance(value, (int, float)):
            value = (int(value),)
        return tuple(int(v) for v in value)
    kind = _FIELDS[name].type
    if kind == "bool" or isinstance(_FIELDS[name].default, bool):
        if isinstance(value, bool):
            return value
        raise ValueError(f"{name} expects a boolean, got {value!r}")
    if isinstance(_FIELDS[name].default, int):
        return int(value)
    if isinstance(_FIELDS[name].default, float):
        return float(value)
    return value


def _parse_scalar(name: str, text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if name == "seeds" or "," in text:
        return [p for p in (s.strip() for s in text.split(",")) if p]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_config_file(path) -> dict:
    """Parse a flat `key = value` file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def build_config(preset: str | None = None, file_values: dict | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Merge preset < config file < explicit overrides over the defaults."""
    merged = {}
    if preset:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choices: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            merged[key] = value
    kwargs = {name: _coerce(name, value) for name, value in merged.items()}
    return ExperimentConfig(**kwargs).validate()
