"""Expert linking rules and the embedding-similarity filter.

Routing rules restrict which vocabularies may answer a query for a given
domain; context rules tag candidates with directives (e.g. a "history of"
query should prefer past-condition concepts) that are passed through to the
reranker rather than filtering anything themselves.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .embeddings import EmbeddingProvider, cosine
from .errors import InvalidRules
from .retrieval import Candidate
from .vocab import ConceptStore

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.5


@dataclass(frozen=True)
class ContextRule:
    """Tag candidates with ``directive`` when ``pattern`` occurs in the query."""

    pattern: str
    directive: str


@dataclass
class LinkingRules:
    """Domain-to-vocabulary routes plus context directives."""

    routes: dict[str, list[str]] = field(default_factory=dict)
    context_rules: list[ContextRule] = field(default_factory=list)

    def to_prompt_text(self) -> str:
        """Deterministic human-readable rendering for prompt inclusion."""
        lines = []
        for domain in sorted(self.routes):
            lines.append(f"- {domain} variables link to: {', '.join(self.routes[domain])}")
        for rule in self.context_rules:
            lines.append(f'- When the query mentions "{rule.pattern}", prefer {rule.directive} concepts')
        return "\n".join(lines)

    def validate_against(self, store: ConceptStore) -> None:
        """Raise InvalidRules if any routed vocabulary is absent from the store."""
        known = store.vocabularies
        for domain, vocabularies in self.routes.items():
            for vocabulary in vocabularies:
                if vocabulary not in known:
                    raise InvalidRules(
                        f"route for domain {domain!r} names unknown vocabulary {vocabulary!r}"
                    )


def default_rules() -> LinkingRules:
    return LinkingRules(
        routes={
            "Condition": ["SNOMED"],
            "Drug": ["RxNorm", "ATC"],
            "Measurement": ["LOINC", "SNOMED"],
            "Unit": ["UCUM"],
        },
        context_rules=[ContextRule(pattern="history of", directive="past-condition")],
    )


def load_rules(path: str | Path) -> LinkingRules:
    """Read rules from JSON: ``{"routes": {...}, "context_rules": [...]}``.

    Raises:
        InvalidRules: the document is not valid JSON or has the wrong shape.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidRules(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidRules(f"{path}: expected a JSON object")
    routes = raw.get("routes", {})
    if not isinstance(routes, dict) or not all(
        isinstance(domain, str)
        and isinstance(vocabularies, list)
        and all(isinstance(v, str) for v in vocabularies)
        for domain, vocabularies in routes.items()
    ):
        raise InvalidRules(f"{path}: routes must map domain to a list of vocabulary names")
    raw_context = raw.get("context_rules", [])
    if not isinstance(raw_context, list):
        raise InvalidRules(f"{path}: context_rules must be a list")
    context_rules = []
    for item in raw_context:
        if not isinstance(item, dict) or not item.get("pattern") or not item.get("directive"):
            raise InvalidRules(f"{path}: context rules need pattern and directive")
        context_rules.append(ContextRule(pattern=str(item["pattern"]), directive=str(item["directive"])))
    return LinkingRules(
        routes={domain: list(vocabularies) for domain, vocabularies in routes.items()},
        context_rules=context_rules,
    )


def save_rules(path: str | Path, rules: LinkingRules) -> None:
    document = {
        "routes": rules.routes,
        "context_rules": [
            {"pattern": rule.pattern, "directive": rule.directive} for rule in rules.context_rules
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def apply_linking_rules(
    candidates: list[Candidate],
    domain_hint: str | None,
    rules: LinkingRules,
    query_text: str | None = None,
) -> list[Candidate]:
    """Route candidates by vocabulary and annotate context directives.

    With a routed domain hint, candidates from other vocabularies are dropped
    (order preserved, drops logged).  An absent or unrouted hint passes every
    candidate through; unrouted hints are logged as a warning.  Context rules
    match case-insensitively against the query text and only annotate; they
    never remove candidates.  Candidates are copied, never mutated, so
    applying the same rules twice is a no-op.
    """
    if domain_hint:
        route = rules.routes.get(domain_hint)
        if route is None:
            logger.warning("no route for domain %r; passing all candidates through", domain_hint)
            kept = list(candidates)
        else:
            allowed = set(route)
            kept = []
            for candidate in candidates:
                if candidate.vocabulary in allowed:
                    kept.append(candidate)
                else:
                    logger.info(
                        "dropped candidate omop_id=%d vocabulary=%s: domain %s routes to %s",
                        candidate.omop_id,
                        candidate.vocabulary,
                        domain_hint,
                        route,
                    )
    else:
        kept = list(candidates)
    directives: list[str] = []
    if query_text:
        folded = query_text.casefold()
        for rule in rules.context_rules:
            if rule.pattern.casefold() in folded:
                directives.append(rule.directive)
    result = []
    for candidate in kept:
        merged = list(candidate.directives)
        for directive in directives:
            if directive not in merged:
                merged.append(directive)
        result.append(replace(candidate, directives=tuple(merged)))
    return result


def filter_by_similarity(
    candidates: list[Candidate],
    query_text: str,
    provider: EmbeddingProvider,
    tau: float = DEFAULT_TAU,
) -> list[Candidate]:
    """Drop candidates whose surface form is dissimilar to the query.

    Similarity is dense cosine between the query and each candidate's matched
    surface form.  Removal is strict: a candidate is dropped only when its
    similarity is strictly below tau, so a score exactly at the threshold
    survives.  Survivors carry their similarity score; input order is kept.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be within [0, 1], got {tau}")
    query = provider.embed_dense(query_text).values
    survivors = []
    for candidate in candidates:
        similarity = cosine(query, provider.embed_dense(candidate.matched_surface).values)
        if similarity < tau:
            logger.info(
                "dropped candidate omop_id=%d: similarity %.4f below %.4f",
                candidate.omop_id,
                similarity,
                tau,
            )
            continue
        survivors.append(replace(candidate, similarity=similarity))
    return survivors
