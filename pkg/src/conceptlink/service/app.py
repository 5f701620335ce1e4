"""FastAPI application exposing the pipeline, review queue and search."""

from __future__ import annotations

import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..errors import (
    BadPayload,
    ConceptLinkError,
    InvalidConcept,
    InvalidEntry,
    InvalidRules,
    MalformedRow,
    NotFound,
    NotPending,
    ProviderFailure,
    UnknownReview,
)
from ..filtering import load_rules
from ..pipeline import PipelineContext
from ..reservoir import ConceptRef
from ..retrieval import merge_retrieve
from .jobs import JobManager
from .schemas import (
    CompleteRequest,
    CompleteResponse,
    ConceptRefPayload,
    DecisionRequest,
    DenseEmbedResponse,
    EmbedRequest,
    HealthResponse,
    JobProgress,
    JobStatusResponse,
    PendingReviewsResponse,
    ReviewItem,
    SearchResponse,
    SearchResult,
    SparseEmbedResponse,
    SparseEntry,
    SubmitJobRequest,
    SubmitJobResponse,
)

logger = logging.getLogger(__name__)

_STATUS_BY_CODE = {
    NotFound.code: 404,
    UnknownReview.code: 404,
    NotPending.code: 409,
    InvalidConcept.code: 400,
    BadPayload.code: 400,
    InvalidRules.code: 400,
    MalformedRow.code: 400,
    InvalidEntry.code: 400,
    ProviderFailure.code: 502,
}


def _review_item(entry) -> ReviewItem:
    return ReviewItem(
        review_id=entry.review_id,
        label=entry.label,
        concepts=[
            ConceptRefPayload(code=ref.code, omop_id=ref.omop_id, role=ref.role)
            for ref in entry.concepts
        ],
        judgement=entry.judgement.value,
        review_status=entry.review_status.value,
        reviewer=entry.reviewer,
        created_at=entry.created_at,
        decided_at=entry.decided_at,
    )


def create_app(
    ctx: PipelineContext,
    rules_path: str | Path | None = None,
    ui_dir: str | Path | None = None,
    job_workers: int = 2,
) -> FastAPI:
    """Build the service around a loaded pipeline context.

    ``rules_path`` enables hot reloading of linking rules; a reload affects
    jobs submitted afterwards.  ``ui_dir`` mounts a static review UI at /ui.
    """
    jobs = JobManager(ctx, max_workers=job_workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        jobs.shutdown()

    app = FastAPI(
        title="conceptlink",
        version="0.1.0",
        docs_url="/v1/docs",
        openapi_url="/v1/openapi.json",
        lifespan=lifespan,
    )
    app.state.ctx = ctx
    app.state.jobs = jobs
    app.state.rules_path = Path(rules_path) if rules_path else None

    @app.exception_handler(ConceptLinkError)
    async def handle_package_error(request: Request, exc: ConceptLinkError):
        status = _STATUS_BY_CODE.get(exc.code, 500)
        return JSONResponse(
            status_code=status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(request: Request, exc: RequestValidationError):
        detail = "; ".join(
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors()
        )
        return JSONResponse(
            status_code=400,
            content={"error": {"code": BadPayload.code, "message": detail}},
        )

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        pending = 0
        if ctx.reservoir is not None:
            _, pending = ctx.reservoir.pending(page=1, page_size=1)
        return HealthResponse(
            status="ok",
            concepts=len(ctx.store),
            surface_forms=ctx.store.surface_count(),
            pending_reviews=pending,
        )

    @app.post("/v1/jobs", response_model=SubmitJobResponse, status_code=202)
    def submit_job(request: SubmitJobRequest) -> SubmitJobResponse:
        job = jobs.submit(request.entries, request.options)
        return SubmitJobResponse(job_id=job.job_id, state=job.state)

    @app.get("/v1/jobs/{job_id}", response_model=JobStatusResponse, response_model_exclude_none=True)
    def job_status(job_id: str) -> JobStatusResponse:
        job = jobs.get(job_id)
        return JobStatusResponse(
            job_id=job.job_id,
            state=job.state,
            submitted_at=job.submitted_at,
            progress=JobProgress(completed=job.completed, total=job.total),
            error=job.error,
            results=job.records,
        )

    @app.get("/v1/review/pending", response_model=PendingReviewsResponse)
    def pending_reviews(
        page: int = Query(default=1, ge=1), page_size: int = Query(default=50, ge=1, le=500)
    ) -> PendingReviewsResponse:
        if ctx.reservoir is None:
            return PendingReviewsResponse(items=[], page=page, page_size=page_size, total=0)
        entries, total = ctx.reservoir.pending(page=page, page_size=page_size)
        return PendingReviewsResponse(
            items=[_review_item(entry) for entry in entries],
            page=page,
            page_size=page_size,
            total=total,
        )

    @app.post("/v1/review/{review_id}/decision", response_model=ReviewItem)
    def decide_review(review_id: str, request: DecisionRequest) -> ReviewItem:
        if ctx.reservoir is None:
            raise UnknownReview("no reservoir is configured")
        concepts = None
        if request.concepts is not None:
            concepts = [
                ConceptRef(code=ref.code, omop_id=ref.omop_id, role=ref.role)
                for ref in request.concepts
            ]
        entry = ctx.reservoir.apply_decision(
            review_id, request.decision, request.reviewer, concepts=concepts
        )
        return _review_item(entry)

    @app.get("/v1/search", response_model=SearchResponse, response_model_exclude_none=True)
    def search(q: str = Query(min_length=1), k: int = Query(default=10, ge=1, le=100)) -> SearchResponse:
        candidates = merge_retrieve(ctx.index, q, k)
        return SearchResponse(
            query=q,
            k=k,
            results=[
                SearchResult(
                    omop_id=c.omop_id,
                    code=c.code,
                    name=c.name,
                    vocabulary=c.vocabulary,
                    semantic_type=c.semantic_type,
                    matched_surface=c.matched_surface,
                    fused_score=c.fused_score,
                    dense_score=c.dense_score,
                    sparse_score=c.sparse_score,
                )
                for c in candidates
            ],
        )

    @app.post("/v1/rules/reload")
    def reload_rules() -> dict:
        if app.state.rules_path is None:
            raise BadPayload("service was started without a rules file")
        rules = load_rules(app.state.rules_path)
        rules.validate_against(ctx.store)
        ctx.rules = rules
        logger.info("reloaded linking rules from %s", app.state.rules_path)
        return {"status": "reloaded"}

    @app.post("/v1/embed/dense", response_model=DenseEmbedResponse)
    def embed_dense(request: EmbedRequest) -> DenseEmbedResponse:
        vectors = [ctx.embedding_provider.embed_dense(text).values.tolist() for text in request.texts]
        return DenseEmbedResponse(vectors=vectors)

    @app.post("/v1/embed/sparse", response_model=SparseEmbedResponse)
    def embed_sparse(request: EmbedRequest) -> SparseEmbedResponse:
        entries = []
        for text in request.texts:
            sparse = ctx.embedding_provider.embed_sparse(text)
            entries.append(
                [SparseEntry(term=term, weight=weight) for term, weight in sorted(sparse.entries.items())]
            )
        return SparseEmbedResponse(entries=entries)

    @app.post("/v1/complete", response_model=CompleteResponse)
    def complete(request: CompleteRequest) -> CompleteResponse:
        text = ctx.llm.complete(request.prompt, temperature=request.temperature, seed=request.seed)
        return CompleteResponse(text=text)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
