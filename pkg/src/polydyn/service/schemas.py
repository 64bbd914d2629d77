"""Pydantic request/response models for the job service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ConfigOverrides(BaseModel):
    """Optional per-field overrides applied on top of preset + config file."""

    model_config = {"extra": "forbid"}

    env: Optional[str] = None
    heads: Optional[int] = Field(None, ge=1)
    segment_size: Optional[int] = Field(None, ge=1)
    selection_horizon: Optional[int] = Field(None, ge=1)
    history_length: Optional[int] = Field(None, ge=1)
    ensemble_size: Optional[int] = Field(None, ge=1)
    hidden_width: Optional[int] = Field(None, ge=1)
    context_dim: Optional[int] = Field(None, ge=0)
    cem_candidates: Optional[int] = Field(None, ge=2)
    cem_iterations: Optional[int] = Field(None, ge=1)
    plan_horizon: Optional[int] = Field(None, ge=1)
    elite_frac: Optional[float] = Field(None, gt=0.0, le=1.0)
    particles: Optional[int] = Field(None, ge=1)
    warm_start: Optional[bool] = None
    cem_std_floor: Optional[float] = Field(None, ge=0.0)
    iterations: Optional[int] = Field(None, ge=1)
    warmup_iterations: Optional[int] = Field(None, ge=0)
    trajectories_per_iteration: Optional[int] = Field(None, ge=1)
    epochs: Optional[int] = Field(None, ge=0)
    batch_size: Optional[int] = Field(None, ge=1)
    learning_rate: Optional[float] = Field(None, gt=0.0)
    lambda_aux: Optional[float] = Field(None, ge=0.0)
    eval_episodes: Optional[int] = Field(None, ge=0)
    seeds: Optional[list[int]] = None
    multi_head_no_mcl: Optional[bool] = None
    non_adaptive_planning: Optional[bool] = None
    no_context: Optional[bool] = None
    env_noise: Optional[float] = Field(None, ge=0.0)
    output_dir: Optional[str] = None

    def as_payload(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class RunRequest(BaseModel):
    preset: Optional[str] = None
    config_file: Optional[str] = None
    overrides: ConfigOverrides = ConfigOverrides()

    def as_payload(self) -> dict:
        return {"preset": self.preset, "config_file": self.config_file,
                "overrides": self.overrides.as_payload()}


class SweepRequest(RunRequest):
    axis: Literal["H", "M", "N"]
    values: list[int] = Field(min_length=1)

    def as_payload(self) -> dict:
        payload = super().as_payload()
        payload.update({"axis": self.axis, "values": list(self.values)})
        return payload


class CheckpointRequest(BaseModel):
    checkpoint: str
    split: Literal["train", "test"] = "test"
    episodes: int = Field(10, ge=0)
    seed: int = 0
    output_dir: Optional[str] = None

    def as_payload(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class EvalRequest(CheckpointRequest):
    non_adaptive_planning: Optional[bool] = None


class AssignmentsRequest(CheckpointRequest):
    split: Literal["train", "test"] = "train"
    episodes: int = Field(8, ge=1)


class ExportFeaturesRequest(CheckpointRequest):
    split: Literal["train", "test"] = "train"
    episodes: int = Field(4, ge=1)


class JobInfo(BaseModel):
    job_id: str
    kind: str
    status: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None


class JobResult(JobInfo):
    outputs: list[str] = []
    summary: dict = {}


class HealthResponse(BaseModel):
    status: str
    version: str
