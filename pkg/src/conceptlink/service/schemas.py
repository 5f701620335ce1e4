"""Request and response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class EntryPayload(BaseModel):
    name: str = ""
    label: str
    data_type: str = ""
    scale: str = ""
    unit: str = ""
    formula: str = ""
    visit: str = ""
    categories: list[str] = Field(default_factory=list)


class JobOptions(BaseModel):
    k: int = Field(default=10, ge=1)
    tau: float = Field(default=0.5, ge=0.0, le=1.0)
    n: int = Field(default=3, ge=1)
    t: int = Field(default=8, ge=1, le=10)
    tau_rel: float = Field(default=0.85, ge=0.0, le=1.0)
    m_examples: int = Field(default=3, ge=0)
    parallelism: int = Field(default=1, ge=1)
    trace: bool = False


class SubmitJobRequest(BaseModel):
    entries: list[EntryPayload] = Field(min_length=1)
    options: JobOptions = Field(default_factory=JobOptions)


class SubmitJobResponse(BaseModel):
    job_id: str
    state: str


class JobProgress(BaseModel):
    completed: int
    total: int


class JobStatusResponse(BaseModel):
    job_id: str
    state: str
    submitted_at: str
    progress: JobProgress
    error: str | None = None
    results: list[dict] | None = None


class ConceptRefPayload(BaseModel):
    code: str
    omop_id: int
    role: str = "base"


class ReviewItem(BaseModel):
    review_id: str
    label: str
    concepts: list[ConceptRefPayload]
    judgement: str
    review_status: str
    reviewer: str | None = None
    created_at: str
    decided_at: str | None = None


class PendingReviewsResponse(BaseModel):
    items: list[ReviewItem]
    page: int
    page_size: int
    total: int


class DecisionRequest(BaseModel):
    decision: Literal["approve", "reject", "modify"]
    reviewer: str = Field(min_length=1)
    concepts: list[ConceptRefPayload] | None = None


class SearchResult(BaseModel):
    omop_id: int
    code: str
    name: str
    vocabulary: str
    semantic_type: str
    matched_surface: str
    fused_score: float
    dense_score: float | None = None
    sparse_score: float | None = None


class SearchResponse(BaseModel):
    query: str
    k: int
    results: list[SearchResult]


class HealthResponse(BaseModel):
    status: str
    concepts: int
    surface_forms: int
    pending_reviews: int


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)


class DenseEmbedResponse(BaseModel):
    vectors: list[list[float]]


class SparseEntry(BaseModel):
    term: int
    weight: float


class SparseEmbedResponse(BaseModel):
    entries: list[list[SparseEntry]]


class CompleteRequest(BaseModel):
    prompt: str
    temperature: float = 0.0
    seed: int | None = None


class CompleteResponse(BaseModel):
    text: str


class ErrorDetail(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorDetail
