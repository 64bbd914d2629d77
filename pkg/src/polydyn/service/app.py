"""FastAPI application exposing the experiment harness as async jobs."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from .jobs import Job, JobManager
from .schemas import (AssignmentsRequest, EvalRequest, ExportFeaturesRequest,
                      HealthResponse, JobInfo, JobResult, RunRequest,
                      SweepRequest)


def _as_result(job: Job) -> JobResult:
    return JobResult(job_id=job.job_id, kind=job.kind, status=job.status,
                     error=job.error, outputs=job.outputs, summary=job.summary)


def create_app() -> FastAPI:
    app = FastAPI(title="polydyn job service", version=__version__)
    manager = JobManager()
    app.state.jobs = manager

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/jobs/run", response_model=JobInfo, status_code=202)
    def submit_run(request: RunRequest):
        return _as_result(manager.submit("run", request.as_payload()))

    @app.post("/jobs/sweep", response_model=JobInfo, status_code=202)
    def submit_sweep(request: SweepRequest):
        return _as_result(manager.submit("sweep", request.as_payload()))

    @app.post("/jobs/eval", response_model=JobInfo, status_code=202)
    def submit_eval(request: EvalRequest):
        return _as_result(manager.submit("eval", request.as_payload()))

    @app.post("/jobs/assignments", response_model=JobInfo, status_code=202)
    def submit_assignments(request: AssignmentsRequest):
        return _as_result(manager.submit("assignments", request.as_payload()))

    @app.post("/jobs/export-features", response_model=JobInfo, status_code=202)
    def submit_export(request: ExportFeaturesRequest):
        return _as_result(manager.submit("export-features", request.as_payload()))

    @app.get("/jobs", response_model=list[JobInfo])
    def list_jobs():
        return [_as_result(j) for j in manager.list()]

    @app.get("/jobs/{job_id}", response_model=JobResult)
    def get_job(job_id: str):
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="no such job")
        return _as_result(job)

    return app
