"""Embedding providers for the dense and sparse search spaces.

The hashed n-gram provider is fully deterministic (stable across processes
and platforms) and exists so that retrieval behaviour can be pinned in tests
and offline runs.  Production deployments point the wire provider at a real
embedding service; precomputed vectors can be loaded from a file to skip
embedding the vocabulary on every start.
"""

from __future__ import annotations

import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import MalformedRow, ProviderFailure
from .text import tokenize

DEFAULT_DENSE_DIM = 256


@dataclass
class DenseVector:
    """Fixed-length dense embedding."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ProviderFailure(f"dense vector must be 1-d, got shape {self.values.shape}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass
class SparseVector:
    """Sparse embedding as a term-id to positive-weight map."""

    entries: dict[int, float]

    def dot(self, other: "SparseVector") -> float:
        a, b = self.entries, other.entries
        if len(b) < len(a):
            a, b = b, a
        return sum(weight * b[term] for term, weight in a.items() if term in b)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with a zero-vector guard (zero norm scores 0.0)."""
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


class EmbeddingProvider(ABC):
    """Embeds free text into the dense and sparse search spaces."""

    @abstractmethod
    def embed_dense(self, text: str) -> DenseVector:
        """Embed ``text`` densely.  Raises ProviderFailure on empty input."""

    @abstractmethod
    def embed_sparse(self, text: str) -> SparseVector:
        """Embed ``text`` sparsely.  Weights are strictly positive."""


def _stable_hash(token: str) -> int:
    return zlib.crc32(token.encode("utf-8"))


class HashedNgramProvider(EmbeddingProvider):
    """Deterministic local embeddings.

    Dense: counts of character 3-grams hashed into ``dim`` buckets with a
    platform-stable hash, L2-normalized.  Texts shorter than 3 characters
    contribute the whole text as a single gram.  Sparse: case-folded token
    counts keyed by hashed term ids.
    """

    def __init__(self, dim: int = DEFAULT_DENSE_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed_dense(self, text: str) -> DenseVector:
        folded = " ".join(text.casefold().split())
        if not folded:
            raise ProviderFailure("cannot embed empty text")
        grams = [folded[i : i + 3] for i in range(len(folded) - 2)] if len(folded) >= 3 else [folded]
        counts = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            counts[_stable_hash(gram) % self.dim] += 1.0
        norm = float(np.linalg.norm(counts))
        return DenseVector(counts / norm)

    def embed_sparse(self, text: str) -> SparseVector:
        entries: dict[int, float] = {}
        for token in tokenize(text):
            term = _stable_hash(token)
            entries[term] = entries.get(term, 0.0) + 1.0
        return SparseVector(entries)


class WireEmbeddingProvider(EmbeddingProvider):
    """Client for an embedding service speaking the JSON wire protocol.

    Dense: ``POST {base}/v1/embed/dense`` with ``{"texts": [...]}`` answered
    by ``{"vectors": [[...], ...]}``.  Sparse: ``POST {base}/v1/embed/sparse``
    answered by ``{"entries": [[{"term": int, "weight": float}, ...], ...]}``.
    """

    def __init__(self, base_url: str, client=None, timeout: float = 30.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        try:
            response = self._client.post(f"{self.base_url}{path}", json=payload)
            response.raise_for_status()
            return response.json()
        except httpx.HTTPError as exc:
            raise ProviderFailure(f"embedding request {path} failed: {exc}") from exc

    def embed_dense(self, text: str) -> DenseVector:
        body = self._post("/v1/embed/dense", {"texts": [text]})
        try:
            vector = body["vectors"][0]
        except (KeyError, IndexError, TypeError):
            raise ProviderFailure(f"malformed dense embedding response: {body!r}") from None
        return DenseVector(np.asarray(vector, dtype=np.float64))

    def embed_sparse(self, text: str) -> SparseVector:
        body = self._post("/v1/embed/sparse", {"texts": [text]})
        try:
            raw = body["entries"][0]
            entries = {int(item["term"]): float(item["weight"]) for item in raw}
        except (KeyError, IndexError, TypeError, ValueError):
            raise ProviderFailure(f"malformed sparse embedding response: {body!r}") from None
        if any(weight <= 0.0 for weight in entries.values()):
            raise ProviderFailure("sparse weights must be strictly positive")
        return SparseVector(entries)


def save_dense_file(path: str | Path, dim: int, vectors: Mapping[tuple[int, str], np.ndarray]) -> None:
    """Write precomputed dense vectors keyed by (omop_id, surface form).

    Format: a ``dim=<n>`` header line, then one tab-separated line per vector:
    ``omop_id<TAB>surface<TAB>v1,v2,...,vn``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim}\n")
        for (omop_id, surface), vector in sorted(vectors.items()):
            rendered = ",".join(repr(float(v)) for v in vector)
            fh.write(f"{omop_id}\t{surface}\t{rendered}\n")


def load_dense_file(path: str | Path) -> tuple[int, dict[tuple[int, str], np.ndarray]]:
    """Read a precomputed dense-vector file written by :func:`save_dense_file`."""
    path = Path(path)
    vectors: dict[tuple[int, str], np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise MalformedRow(str(path), 1, f"expected dim=<n> header, got {header!r}")
        try:
            dim = int(header[4:])
        except ValueError:
            raise MalformedRow(str(path), 1, f"bad dimension in header {header!r}") from None
        for row_number, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedRow(str(path), row_number, "expected omop_id, surface, vector fields")
            try:
                omop_id = int(parts[0])
                vector = np.asarray([float(v) for v in parts[2].split(",")], dtype=np.float64)
            except ValueError:
                raise MalformedRow(str(path), row_number, "unparseable id or vector") from None
            if vector.shape[0] != dim:
                raise MalformedRow(
                    str(path), row_number, f"vector has {vector.shape[0]} values, expected {dim}"
                )
            vectors[(omop_id, parts[1])] = vector
    return dim, vectors
