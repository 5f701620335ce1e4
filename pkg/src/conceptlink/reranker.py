"""Two-step candidate reranking with self-consistency voting.

Step one asks the model to score every candidate on a 1..10 scale; step two
maps scores onto relevance categories and votes across n independent rounds.
A candidate is selected only when its vote share clears the consensus
threshold; otherwise the decision is the literal "NA".
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, field
from enum import Enum

from .errors import OutOfRange, ProviderFailure
from .llm import LLMProvider
from .prompts import RERANK_REPROMPT, build_rerank_prompt
from .retrieval import Candidate

logger = logging.getLogger(__name__)

NA_LITERAL = "NA"

MIN_SCORE = 1
MAX_SCORE = 10

# Self-consistency needs variation across rounds; seeds keep it reproducible.
RERANK_TEMPERATURE = 0.7

_SCORE_PAIR = re.compile(r"(\d+)\s*[:=]\s*(\d+)")


class RelevanceCategory(str, Enum):
    NOT_RELEVANT = "not_relevant"
    PARTIALLY_RELEVANT = "partially_relevant"
    HIGHLY_RELEVANT = "highly_relevant"
    EXACT_MATCH = "exact_match"


def classify(score: int) -> RelevanceCategory:
    """Map a 1..10 relevance score onto its category band.

    1..4 is not relevant, 5..7 partially relevant, 8..9 highly relevant and
    10 an exact match.

    Raises:
        OutOfRange: score is not an integer within 1..10.
    """
    if not isinstance(score, int) or isinstance(score, bool) or not MIN_SCORE <= score <= MAX_SCORE:
        raise OutOfRange(f"relevance score must be an integer in 1..10, got {score!r}")
    if score <= 4:
        return RelevanceCategory.NOT_RELEVANT
    if score <= 7:
        return RelevanceCategory.PARTIALLY_RELEVANT
    if score <= 9:
        return RelevanceCategory.HIGHLY_RELEVANT
    return RelevanceCategory.EXACT_MATCH


@dataclass
class RerankConfig:
    """Knobs for self-consistency voting.

    n: number of scoring rounds.  t: minimum score that counts as a vote for
    relevance.  tau_rel: vote share a candidate must exceed to be selectable.
    """

    n: int = 3
    t: int = 8
    tau_rel: float = 0.85

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not MIN_SCORE <= self.t <= MAX_SCORE:
            raise ValueError("t must be within 1..10")
        if not 0.0 <= self.tau_rel <= 1.0:
            raise ValueError("tau_rel must be within [0, 1]")


@dataclass
class ScoredCandidate:
    """A candidate with its per-round scores and vote summary."""

    candidate: Candidate
    scores: list[int]
    votes: list[int]
    confidence: float
    categories: list[RelevanceCategory] = field(default_factory=list)

    @property
    def mean_score(self) -> float:
        return statistics.fmean(self.scores) if self.scores else 0.0


@dataclass
class MatchDecision:
    """Outcome of reranking: a selected candidate or NA."""

    selected: ScoredCandidate | None
    scored: list[ScoredCandidate] = field(default_factory=list)

    @property
    def is_na(self) -> bool:
        return self.selected is None


def parse_scores(completion: str, count: int) -> list[int | None]:
    """Extract per-candidate scores from "<index>:<score>" pairs.

    Returns a list aligned with candidate positions; entries are None when
    the score is missing or outside 1..10.  A repeated index keeps the last
    value.
    """
    scores: list[int | None] = [None] * count
    for match in _SCORE_PAIR.finditer(completion):
        position = int(match.group(1))
        score = int(match.group(2))
        if 1 <= position <= count and MIN_SCORE <= score <= MAX_SCORE:
            scores[position - 1] = score
    return scores


def score_round(
    query_text: str,
    candidates: list[Candidate],
    provider: LLMProvider,
    seed: int | None = None,
    directives: list[str] | None = None,
) -> list[int]:
    """One scoring round: a single model call, with one repair reprompt.

    A completion that leaves any candidate unscored (or out of range)
    triggers exactly one reprompt with a repair instruction appended; scores
    still missing after that default to the minimum score and are logged.
    Only transport failures raise.

    Raises:
        ProviderFailure: the provider itself failed.
    """
    if not candidates:
        return []
    if directives is None:
        merged: list[str] = []
        for candidate in candidates:
            for directive in candidate.directives:
                if directive not in merged:
                    merged.append(directive)
        directives = merged
    prompt = build_rerank_prompt(query_text, candidates, directives)
    completion = provider.complete(prompt, temperature=RERANK_TEMPERATURE, seed=seed)
    scores = parse_scores(completion, len(candidates))
    if any(score is None for score in scores):
        reprompt = prompt + "\n\n" + RERANK_REPROMPT
        retry_completion = provider.complete(reprompt, temperature=RERANK_TEMPERATURE, seed=seed)
        retry_scores = parse_scores(retry_completion, len(candidates))
        scores = [b if b is not None else a for a, b in zip(scores, retry_scores)]
    final = []
    for position, score in enumerate(scores):
        if score is None:
            logger.info(
                "no usable score for candidate %d (omop_id=%d); defaulting to %d",
                position + 1,
                candidates[position].omop_id,
                MIN_SCORE,
            )
            score = MIN_SCORE
        final.append(score)
    return final


def self_consistency(
    query_text: str,
    candidates: list[Candidate],
    provider: LLMProvider,
    config: RerankConfig,
    base_seed: int = 0,
) -> list[ScoredCandidate]:
    """Score candidates across n rounds and aggregate votes.

    Round j runs with seed ``base_seed + j``.  A round whose provider call
    fails is retried once with the same seed; if it fails again every
    candidate scores the minimum for that round, which counts all its votes
    as 0.  Each candidate's confidence is the mean of its votes, where a vote
    is 1 exactly when the round's score is at or above the vote threshold.
    """
    if not candidates:
        return []
    rounds: list[list[int]] = []
    for j in range(config.n):
        seed = base_seed + j
        try:
            scores = score_round(query_text, candidates, provider, seed=seed)
        except ProviderFailure:
            try:
                scores = score_round(query_text, candidates, provider, seed=seed)
            except ProviderFailure as exc:
                logger.warning("scoring round %d failed twice: %s", j, exc)
                scores = [MIN_SCORE] * len(candidates)
        rounds.append(scores)
    results = []
    for position, candidate in enumerate(candidates):
        scores = [rounds[j][position] for j in range(config.n)]
        votes = [1 if score >= config.t else 0 for score in scores]
        results.append(
            ScoredCandidate(
                candidate=candidate,
                scores=scores,
                votes=votes,
                confidence=sum(votes) / config.n,
                categories=[classify(score) for score in scores],
            )
        )
    return results


def select_top(scored: list[ScoredCandidate], config: RerankConfig) -> MatchDecision:
    """Pick the winning candidate, or NA when consensus is too weak.

    Only candidates whose confidence strictly exceeds tau_rel are eligible.
    Among them the highest confidence wins; ties fall back to the higher mean
    score, then to the lower omop id.
    """
    eligible = [s for s in scored if s.confidence > config.tau_rel]
    if not eligible:
        return MatchDecision(selected=None, scored=list(scored))
    eligible.sort(key=lambda s: (-s.confidence, -s.mean_score, s.candidate.omop_id))
    return MatchDecision(selected=eligible[0], scored=list(scored))
