"""Hybrid retrieval over a concept store.

Every surface form of every concept gets one dense vector and one sparse
posting.  Dense vectors embed a composed information string (surface form
plus semantic type plus parent names) so that hierarchy context influences
dense similarity; sparse postings index the raw surface form.  Dense and
sparse rankings are merged with reciprocal-rank fusion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .embeddings import DenseVector, EmbeddingProvider, SparseVector, cosine
from .errors import ProviderFailure
from .vocab import Concept, ConceptStore

logger = logging.getLogger(__name__)

RRF_K = 60

INFO_SEPARATOR = " | "
PARENT_SEPARATOR = "; "


@dataclass
class Candidate:
    """One retrieved concept, enriched as it moves through the pipeline."""

    omop_id: int
    code: str
    name: str
    vocabulary: str
    semantic_type: str
    matched_surface: str
    dense_score: float | None = None
    sparse_score: float | None = None
    fused_score: float = 0.0
    sources: tuple[str, ...] = ()
    similarity: float | None = None
    directives: tuple[str, ...] = ()


@dataclass
class IndexEntry:
    omop_id: int
    surface: str
    text: str
    dense: DenseVector
    sparse: SparseVector


class RetrievalIndex:
    """Dense and sparse vectors for every surface form in a store."""

    def __init__(self, store: ConceptStore, provider: EmbeddingProvider, entries: list[IndexEntry], dim: int):
        self.store = store
        self.provider = provider
        self.entries = entries
        self.dim = dim

    def __len__(self) -> int:
        return len(self.entries)


def compose_info_text(surface: str, concept: Concept, store: ConceptStore) -> str:
    """Join surface form, semantic type and parent names; absent fields are omitted."""
    parts = [surface]
    if concept.semantic_type:
        parts.append(concept.semantic_type)
    if concept.parents:
        names = [store.get_concept(pid).name for pid in sorted(concept.parents)]
        parts.append(PARENT_SEPARATOR.join(names))
    return INFO_SEPARATOR.join(parts)


def build_index(
    store: ConceptStore,
    provider: EmbeddingProvider,
    precomputed: dict[tuple[int, str], "object"] | None = None,
) -> RetrievalIndex:
    """Embed every surface form of every concept.

    Concepts are visited in ascending omop id order and surfaces in
    name-then-sorted-synonym order, so the index layout does not depend on
    input file ordering.  ``precomputed`` maps (omop_id, surface) to dense
    vectors and overrides the provider for those entries.

    Raises:
        ProviderFailure: a dense vector's dimensionality disagrees with the
            rest of the index; the message names the offending surface form.
    """
    entries: list[IndexEntry] = []
    dim: int | None = None
    for concept in store.concepts():
        for surface in concept.surface_forms():
            text = compose_info_text(surface, concept, store)
            if precomputed is not None and (concept.omop_id, surface) in precomputed:
                dense = DenseVector(precomputed[(concept.omop_id, surface)])
            else:
                dense = provider.embed_dense(text)
            if dim is None:
                dim = dense.dim
            elif dense.dim != dim:
                raise ProviderFailure(
                    f"dense vector for surface {surface!r} (omop_id {concept.omop_id})"
                    f" has dim {dense.dim}, expected {dim}"
                )
            sparse = provider.embed_sparse(surface)
            entries.append(IndexEntry(concept.omop_id, surface, text, dense, sparse))
    logger.info("indexed %d surface forms across %d concepts", len(entries), len(store))
    return RetrievalIndex(store, provider, entries, dim or 0)


def _candidate_for(index: RetrievalIndex, entry: IndexEntry) -> Candidate:
    concept = index.store.get_concept(entry.omop_id)
    return Candidate(
        omop_id=concept.omop_id,
        code=concept.code,
        name=concept.name,
        vocabulary=concept.vocabulary,
        semantic_type=concept.semantic_type,
        matched_surface=entry.surface,
    )


def _best_per_concept(
    index: RetrievalIndex, scored: list[tuple[float, IndexEntry]], k: int
) -> list[tuple[float, IndexEntry]]:
    """Keep each concept's best-scoring surface, then the top k by score.

    Ties are broken by ascending omop id; within a concept the earliest
    surface in index order wins so results do not depend on sort stability.
    """
    best: dict[int, tuple[float, IndexEntry]] = {}
    for score, entry in scored:
        current = best.get(entry.omop_id)
        if current is None or score > current[0]:
            best[entry.omop_id] = (score, entry)
    ranked = sorted(best.values(), key=lambda pair: (-pair[0], pair[1].omop_id))
    return ranked[:k]


def retrieve_dense(index: RetrievalIndex, query_text: str, k: int) -> list[Candidate]:
    """Top-k concepts by cosine similarity in the dense space.

    Scores every index entry exactly (no approximate search), deduplicates to
    one candidate per concept and returns at most k candidates sorted by
    descending score with ascending omop id on ties.  Zero-score candidates
    are kept: an orthogonal query still yields a ranking.
    """
    query = index.provider.embed_dense(query_text)
    if index.entries and query.dim != index.dim:
        raise ProviderFailure(f"query vector has dim {query.dim}, index has dim {index.dim}")
    scored = [(cosine(query.values, entry.dense.values), entry) for entry in index.entries]
    results = []
    for score, entry in _best_per_concept(index, scored, k):
        candidate = _candidate_for(index, entry)
        candidate.dense_score = score
        candidate.sources = ("dense",)
        results.append(candidate)
    return results


def retrieve_sparse(index: RetrievalIndex, query_text: str, k: int) -> list[Candidate]:
    """Top-k concepts by dot product in the sparse space; ordering as dense."""
    query = index.provider.embed_sparse(query_text)
    scored = [(query.dot(entry.sparse), entry) for entry in index.entries]
    results = []
    for score, entry in _best_per_concept(index, scored, k):
        candidate = _candidate_for(index, entry)
        candidate.sparse_score = score
        candidate.sources = ("sparse",)
        results.append(candidate)
    return results


def rrf_weight(rank: int) -> float:
    """Reciprocal-rank fusion weight for a 1-based rank."""
    return 1.0 / (RRF_K + rank)


def merge_retrieve(index: RetrievalIndex, query_text: str, k: int) -> list[Candidate]:
    """Fuse dense and sparse top-k rankings with reciprocal-rank fusion.

    Each candidate's fused score is the sum of ``1 / (60 + rank)`` over the
    source rankings that contain it.  The result holds at most 2k candidates
    sorted by descending fused score, ascending omop id on ties.  A candidate
    found by both sources keeps the dense ranking's matched surface.
    """
    dense = retrieve_dense(index, query_text, k)
    sparse = retrieve_sparse(index, query_text, k)
    merged: dict[int, Candidate] = {}
    for rank, candidate in enumerate(dense, start=1):
        candidate.fused_score = rrf_weight(rank)
        merged[candidate.omop_id] = candidate
    for rank, candidate in enumerate(sparse, start=1):
        existing = merged.get(candidate.omop_id)
        if existing is None:
            candidate.fused_score = rrf_weight(rank)
            merged[candidate.omop_id] = candidate
        else:
            existing.sparse_score = candidate.sparse_score
            existing.sources = existing.sources + ("sparse",)
            existing.fused_score += rrf_weight(rank)
    ranked = sorted(merged.values(), key=lambda c: (-c.fused_score, c.omop_id))
    return ranked
