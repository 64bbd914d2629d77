"""In-process job manager: one worker thread per submitted job."""

from __future__ import annotations

import threading
import traceback
import uuid
from dataclasses import dataclass, field

from ..harness import execute_job


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = "queued"
    error: str | None = None
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


class JobManager:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, payload: dict) -> Job:
        job = Job(job_id=uuid.uuid4().hex, kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job
        thread = threading.Thread(target=self._work, args=(job, payload),
                                  daemon=True)
        thread.start()
        return job

    def _work(self, job: Job, payload: dict):
        with self._lock:
            job.status = "running"
        try:
            result = execute_job(job.kind, payload)
        except Exception as exc:
            with self._lock:
                job.status = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
                job.summary = {"traceback": traceback.format_exc(limit=10)}
            return
        with self._lock:
            job.status = "done"
            job.outputs = list(result["outputs"])
            job.summary = result["summary"]

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def list(self) -> list[Job]:
        with self._lock:
            return list(self._jobs.values())
