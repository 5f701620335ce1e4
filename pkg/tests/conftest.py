"""Shared fixtures for the test suite."""

from __future__ import annotations

import pytest

from conceptlink.embeddings import DenseVector, EmbeddingProvider, HashedNgramProvider, SparseVector

import support


@pytest.fixture(scope="session")
def small_store():
    """Four-concept store, unexpanded."""
    return support.load_small_store(expanded=False)


@pytest.fixture(scope="session")
def small_store_expanded():
    return support.load_small_store()


@pytest.fixture(scope="session")
def full_store():
    """Twenty-concept store, unexpanded."""
    return support.load_full_store(expanded=False)


@pytest.fixture(scope="session")
def full_store_expanded():
    return support.load_full_store()


@pytest.fixture()
def provider():
    return HashedNgramProvider()


class StubEmbeddingProvider(EmbeddingProvider):
    """Maps known texts to fixed dense vectors; sparse falls back to hashing."""

    def __init__(self, vectors: dict[str, list[float]], default: list[float] | None = None):
        self.vectors = vectors
        self.default = default
        self._fallback = HashedNgramProvider(dim=len(next(iter(vectors.values()))))

    def embed_dense(self, text: str) -> DenseVector:
        if text in self.vectors:
            return DenseVector(self.vectors[text])
        if self.default is not None:
            return DenseVector(self.default)
        return self._fallback.embed_dense(text)

    def embed_sparse(self, text: str) -> SparseVector:
        return self._fallback.embed_sparse(text)


class CountingEmbeddingProvider(EmbeddingProvider):
    """Delegates while counting calls; used to prove stages were skipped."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.dense_calls = 0
        self.sparse_calls = 0

    def embed_dense(self, text: str) -> DenseVector:
        self.dense_calls += 1
        return self.inner.embed_dense(text)

    def embed_sparse(self, text: str) -> SparseVector:
        self.sparse_calls += 1
        return self.inner.embed_sparse(text)


@pytest.fixture()
def stub_provider_factory():
    return StubEmbeddingProvider


@pytest.fixture()
def counting_provider_factory():
    return CountingEmbeddingProvider
