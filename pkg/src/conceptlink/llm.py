"""Completion providers: scripted replay, deterministic mock, wire client.

The scripted provider replays completions keyed by a fingerprint of the full
prompt and seed, which makes end-to-end pipeline runs reproducible down to
the byte.  The mock provider answers the package's own prompt formats with
transparent heuristics; it is the default offline provider and the tool used
to bootstrap scripted fixtures.
"""

from __future__ import annotations

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable

from . import prompts
from .errors import ProviderFailure
from .text import normalize_surface, tokenize

logger = logging.getLogger(__name__)


class LLMProvider(ABC):
    """Text-completion interface used by decomposition, reranking and judging."""

    @abstractmethod
    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        """Return the completion text.  Raises ProviderFailure on transport errors."""


def prompt_fingerprint(prompt: str, seed: int | None = None) -> str:
    """Stable 16-hex-digit key for a (prompt, seed) pair."""
    digest = hashlib.sha256()
    digest.update(prompt.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(str(seed).encode("utf-8"))
    return digest.hexdigest()[:16]


class ScriptedLLMProvider(LLMProvider):
    """Replays recorded completions; unknown prompts are transport failures."""

    def __init__(self, completions: dict[str, str]):
        self.completions = dict(completions)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLLMProvider":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.completions, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    def record(self, prompt: str, seed: int | None, completion: str) -> None:
        self.completions[prompt_fingerprint(prompt, seed)] = completion

    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        key = prompt_fingerprint(prompt, seed)
        try:
            return self.completions[key]
        except KeyError:
            raise ProviderFailure(f"no scripted completion for fingerprint {key}") from None


class FunctionLLMProvider(LLMProvider):
    """Adapts a plain callable; handy for targeted tests."""

    def __init__(self, fn: Callable[[str, int | None], str]):
        self._fn = fn

    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        return self._fn(prompt, seed)


class RecordingLLMProvider(LLMProvider):
    """Wraps another provider, counting and optionally capturing every call."""

    def __init__(self, inner: LLMProvider):
        self.inner = inner
        self.calls: list[tuple[str, int | None, str]] = []

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def calls_of_kind(self, kind: str) -> int:
        return sum(1 for prompt, _, _ in self.calls if prompts.prompt_kind(prompt) == kind)

    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        completion = self.inner.complete(prompt, temperature=temperature, seed=seed)
        self.calls.append((prompt, seed, completion))
        return completion


_STOPWORDS = frozenset({"a", "an", "and", "by", "for", "in", "of", "on", "or", "the", "to", "with"})


def _content_tokens(text: str) -> frozenset[str]:
    return frozenset(token for token in tokenize(text) if token not in _STOPWORDS)


class MockLLMProvider(LLMProvider):
    """Deterministic heuristic answers to the package's own prompt formats.

    Decomposition prompts: answered from the ``decompositions`` scenario map
    (keyed by normalized label) when present, otherwise by echoing the entry
    metadata (base entity is the label itself).  Labels in ``refusals`` get a
    useless non-JSON reply on every attempt.  Rerank prompts: scored by
    normalized-name and token-overlap heuristics, with per-query overrides in
    ``rerank_overrides``.  Judge prompts: ``judgements`` by label, default
    "correct".
    """

    def __init__(
        self,
        decompositions: dict[str, dict] | None = None,
        refusals: set[str] | None = None,
        rerank_overrides: dict[str, dict[str, int]] | None = None,
        judgements: dict[str, str] | None = None,
    ):
        self.decompositions = {normalize_surface(k): v for k, v in (decompositions or {}).items()}
        self.refusals = {normalize_surface(label) for label in (refusals or set())}
        self.rerank_overrides = {
            normalize_surface(query): {normalize_surface(name): score for name, score in scores.items()}
            for query, scores in (rerank_overrides or {}).items()
        }
        self.judgements = {normalize_surface(k): v for k, v in (judgements or {}).items()}

    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        kind = prompts.prompt_kind(prompt)
        if kind == "decompose":
            return self._decompose(prompt)
        if kind == "rerank":
            return self._rerank(prompt)
        if kind == "judge":
            return self._judge(prompt)
        raise ProviderFailure("mock provider cannot answer an unrecognized prompt")

    def _decompose(self, prompt: str) -> str:
        label = prompts.extract_entry_label(prompt)
        key = normalize_surface(label)
        if key in self.refusals:
            return "I cannot help with that."
        if key in self.decompositions:
            return prompts.serialize_decomposition(self.decompositions[key])
        fields = prompts.extract_entry_section(prompt)
        record: dict[str, object] = {"base_entity": label}
        for name in ("unit", "visit", "formula"):
            if fields.get(name):
                record[name] = fields[name]
        if fields.get("categories"):
            record["categories"] = fields["categories"]
        return prompts.serialize_decomposition(record)

    def _score_name(self, query: str, name: str) -> int:
        if normalize_surface(name) == normalize_surface(query):
            return 10
        query_tokens = _content_tokens(query)
        name_tokens = _content_tokens(name)
        if query_tokens and query_tokens == name_tokens:
            return 9
        union = query_tokens | name_tokens
        overlap = len(query_tokens & name_tokens) / len(union) if union else 0.0
        if overlap >= 0.5:
            return 8
        if overlap >= 0.25:
            return 5
        return 2

    def _rerank(self, prompt: str) -> str:
        query = prompts.extract_rerank_query(prompt)
        overrides = self.rerank_overrides.get(normalize_surface(query), {})
        lines = []
        for position, name in prompts.extract_rerank_items(prompt):
            score = overrides.get(normalize_surface(name))
            if score is None:
                score = self._score_name(query, name)
            lines.append(f"{position}:{score}")
        return "\n".join(lines)

    def _judge(self, prompt: str) -> str:
        label = prompts.extract_judge_label(prompt)
        return self.judgements.get(normalize_surface(label), "correct")


class WireLLMProvider(LLMProvider):
    """Client for a completion service: ``POST {base}/v1/complete`` with
    ``{"prompt", "temperature", "seed"}`` answered by ``{"text": ...}``."""

    def __init__(self, base_url: str, client=None, timeout: float = 60.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: str, temperature: float = 0.0, seed: int | None = None) -> str:
        import httpx

        payload = {"prompt": prompt, "temperature": temperature, "seed": seed}
        try:
            response = self._client.post(f"{self.base_url}/v1/complete", json=payload)
            response.raise_for_status()
            body = response.json()
        except httpx.HTTPError as exc:
            raise ProviderFailure(f"completion request failed: {exc}") from exc
        try:
            return str(body["text"])
        except (KeyError, TypeError):
            raise ProviderFailure(f"malformed completion response: {body!r}") from None
