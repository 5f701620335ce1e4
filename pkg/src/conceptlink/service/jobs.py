"""Background mapping jobs.

Jobs run on a bounded worker pool.  A job moves queued -> running -> done or
failed; progress only ever counts up.  Completed results are frozen at
completion time so repeated status reads are byte-identical.
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

from ..decomposer import DataDictionaryEntry
from ..errors import NotFound
from ..pipeline import PipelineContext, map_dictionary
from ..reranker import RerankConfig
from .schemas import EntryPayload, JobOptions

logger = logging.getLogger(__name__)

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"


@dataclass
class Job:
    job_id: str
    state: str
    submitted_at: str
    total: int
    completed: int = 0
    error: str | None = None
    records: list[dict] | None = None
    options: JobOptions = field(default_factory=JobOptions)


class JobManager:
    """Owns job state and the worker pool that executes mapping runs."""

    def __init__(self, ctx: PipelineContext, max_workers: int = 2):
        self.ctx = ctx
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="mapjob")

    def submit(self, entries: list[EntryPayload], options: JobOptions) -> Job:
        job = Job(
            job_id="job-" + uuid.uuid4().hex[:12],
            state=QUEUED,
            submitted_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            total=len(entries),
            options=options,
        )
        with self._lock:
            self._jobs[job.job_id] = job
        parsed = [DataDictionaryEntry.from_record(entry.model_dump()) for entry in entries]
        self._pool.submit(self._run, job, parsed)
        return job

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise NotFound(f"no job {job_id!r}")
        return job

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)

    def _run(self, job: Job, entries: list[DataDictionaryEntry]) -> None:
        options = job.options
        run_ctx = self.ctx.with_options(
            k=options.k,
            tau=options.tau,
            rerank=RerankConfig(n=options.n, t=options.t, tau_rel=options.tau_rel),
            m_examples=options.m_examples,
        )

        def on_progress(completed: int, total: int) -> None:
            with self._lock:
                job.completed = max(job.completed, completed)

        with self._lock:
            job.state = RUNNING
        try:
            results = map_dictionary(
                entries,
                run_ctx,
                parallelism=options.parallelism,
                progress=on_progress,
                trace_enabled=options.trace,
            )
            records = [result.to_record(include_trace=options.trace) for result in results]
            with self._lock:
                job.records = records
                job.completed = job.total
                job.state = DONE
        except Exception as exc:  # a failed job must surface, not vanish
            logger.exception("job %s failed", job.job_id)
            with self._lock:
                job.error = str(exc)
                job.state = FAILED
