"""The knowledge reservoir: accepted mappings, review queue and export.

Mappings produced by the pipeline enter the reservoir only through a dual
gate: an automatic judgement discards clearly wrong results, and everything
else waits as pending until a human reviewer approves, rejects or modifies
it.  Only approved or modified entries are served back to the pipeline.

State is persisted as an append-only JSON Lines log; loading replays the log
without rewriting it, so a crash between writes loses at most the record
being written.  One record is appended per state change:

    {"record": "enqueue", "review_id": ..., "label": ..., "judgement": ...,
     "concepts": [{"code": ..., "omop_id": ..., "role": ...}], "created_at": ...}
    {"record": "decision", "review_id": ..., "status": ..., "reviewer": ...,
     "concepts": [...] | null, "decided_at": ...}
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol

from .errors import InvalidConcept, NotPending, UnknownReview
from .llm import LLMProvider
from .prompts import build_judge_prompt
from .text import normalize_surface
from .vocab import ConceptStore

logger = logging.getLogger(__name__)


class Judgement(str, Enum):
    CORRECT = "correct"
    PARTIALLY_CORRECT = "partially_correct"
    INCORRECT = "incorrect"


class ReviewStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"
    MODIFIED = "modified"


FINAL_STATUSES = frozenset({ReviewStatus.APPROVED, ReviewStatus.REJECTED, ReviewStatus.MODIFIED})
SERVABLE_STATUSES = frozenset({ReviewStatus.APPROVED, ReviewStatus.MODIFIED})

DECISION_STATUS = {
    "approve": ReviewStatus.APPROVED,
    "reject": ReviewStatus.REJECTED,
    "modify": ReviewStatus.MODIFIED,
}

ROLE_PREDICATES = {
    "unit": "hasUnit",
    "category": "hasCategory",
    "visit": "hasVisit",
}


@dataclass(frozen=True)
class ConceptRef:
    """A (code, omop id) pair with the component role it fills."""

    code: str
    omop_id: int
    role: str = "base"

    def to_record(self) -> dict:
        return {"code": self.code, "omop_id": self.omop_id, "role": self.role}

    @classmethod
    def from_record(cls, record: dict) -> "ConceptRef":
        return cls(
            code=str(record["code"]),
            omop_id=int(record["omop_id"]),
            role=str(record.get("role", "base")),
        )


@dataclass
class ReservoirEntry:
    review_id: str
    label: str
    normalized_label: str
    concepts: tuple[ConceptRef, ...]
    judgement: Judgement
    review_status: ReviewStatus
    reviewer: str | None = None
    created_at: str = ""
    decided_at: str | None = None


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        if not (self.subject and self.predicate and self.object):
            raise ValueError("triple fields must be non-empty")

    def render(self) -> str:
        return f"{self.subject}\t{self.predicate}\t{self.object}"


class _JudgedConcept(Protocol):
    name: str
    vocabulary: str
    code: str


def judge(label: str, concept: _JudgedConcept, provider: LLMProvider) -> Judgement:
    """Zero-shot judgement of a proposed mapping.

    The answer is matched leniently; anything unparseable is treated as
    incorrect, which keeps unjudgeable mappings out of the reservoir.
    """
    prompt = build_judge_prompt(label, concept.name, concept.vocabulary, concept.code)
    completion = provider.complete(prompt, temperature=0.0, seed=0)
    folded = completion.casefold()
    if "partially" in folded:
        return Judgement.PARTIALLY_CORRECT
    if "incorrect" in folded:
        return Judgement.INCORRECT
    if "correct" in folded:
        return Judgement.CORRECT
    logger.info("unparseable judgement %r for label %r; treating as incorrect", completion, label)
    return Judgement.INCORRECT


def review_id_for(label: str, concepts: tuple[ConceptRef, ...]) -> str:
    """Deterministic review id from the normalized label and omop id set."""
    digest = hashlib.sha1()
    digest.update(normalize_surface(label).encode("utf-8"))
    digest.update(b"\x00")
    digest.update(",".join(str(i) for i in sorted({c.omop_id for c in concepts})).encode("utf-8"))
    return "rv-" + digest.hexdigest()[:12]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Reservoir:
    """Reviewed mapping store with append-only persistence.

    Mutations are serialized by a lock; lookups read an immutable snapshot
    that is swapped atomically, so pipeline reads never block on review
    writes.  With ``path=None`` the reservoir lives in memory only.  ``store``
    enables validation of reviewer-modified concepts; ``clock`` is injectable
    for reproducible timestamps.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        store: ConceptStore | None = None,
        clock: Callable[[], str] = _utc_now,
    ):
        self.path = Path(path) if path is not None else None
        self.store = store
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, ReservoirEntry] = {}
        self._servable: dict[str, ReservoirEntry] = {}
        if self.path is not None and self.path.exists():
            self._replay()

    # -- queries ------------------------------------------------------------

    def lookup(self, label: str) -> ReservoirEntry | None:
        """The servable (approved or modified) entry for a label, if any."""
        return self._servable.get(normalize_surface(label))

    def get(self, review_id: str) -> ReservoirEntry:
        try:
            return self._entries[review_id]
        except KeyError:
            raise UnknownReview(f"no review entry {review_id!r}") from None

    def entries(self) -> list[ReservoirEntry]:
        return sorted(self._entries.values(), key=lambda e: (e.created_at, e.review_id))

    def pending(self, page: int = 1, page_size: int = 50) -> tuple[list[ReservoirEntry], int]:
        """One page of pending entries in stable (created_at, review_id) order."""
        if page < 1 or page_size < 1:
            raise ValueError("page and page_size must be positive")
        waiting = [e for e in self.entries() if e.review_status is ReviewStatus.PENDING]
        start = (page - 1) * page_size
        return waiting[start : start + page_size], len(waiting)

    # -- mutations ----------------------------------------------------------

    def enqueue(
        self, label: str, concepts: list[ConceptRef], judgement: Judgement
    ) -> str | None:
        """Admit a mapping to the review queue, or discard it.

        Incorrect judgements are discarded (logged, returns None).  A pending
        entry with the same normalized label and omop id set is reused rather
        than duplicated.  Returns the review id of the queued entry.
        """
        if judgement is Judgement.INCORRECT:
            logger.info("discarding mapping for %r: judged incorrect", label)
            return None
        refs = tuple(concepts)
        review_id = review_id_for(label, refs)
        with self._lock:
            existing = self._entries.get(review_id)
            if existing is not None and existing.review_status is ReviewStatus.PENDING:
                return review_id
            if existing is not None:
                # Already decided; the decision stands.
                return review_id
            entry = ReservoirEntry(
                review_id=review_id,
                label=label,
                normalized_label=normalize_surface(label),
                concepts=refs,
                judgement=judgement,
                review_status=ReviewStatus.PENDING,
                created_at=self.clock(),
            )
            self._entries[review_id] = entry
            self._append(
                {
                    "record": "enqueue",
                    "review_id": entry.review_id,
                    "label": entry.label,
                    "judgement": entry.judgement.value,
                    "concepts": [ref.to_record() for ref in entry.concepts],
                    "created_at": entry.created_at,
                }
            )
        return review_id

    def apply_decision(
        self,
        review_id: str,
        decision: str,
        reviewer: str,
        concepts: list[ConceptRef] | None = None,
    ) -> ReservoirEntry:
        """Resolve a pending entry with an approve, reject or modify decision.

        Modify replaces the concept set with reviewer-supplied references,
        each validated against the vocabulary store.  Decisions are final;
        deciding a non-pending entry raises.

        Raises:
            UnknownReview: no entry under ``review_id``.
            NotPending: the entry is already decided.
            InvalidConcept: a modify decision names an unknown concept, or a
                modify decision supplies no concepts at all.
            ValueError: the decision verb is unknown.
        """
        status = DECISION_STATUS.get(decision)
        if status is None:
            raise ValueError(f"unknown decision {decision!r}; expected approve, reject or modify")
        with self._lock:
            entry = self._entries.get(review_id)
            if entry is None:
                raise UnknownReview(f"no review entry {review_id!r}")
            if entry.review_status is not ReviewStatus.PENDING:
                raise NotPending(f"review entry {review_id} is already {entry.review_status.value}")
            new_concepts = entry.concepts
            if status is ReviewStatus.MODIFIED:
                if not concepts:
                    raise InvalidConcept("a modify decision must supply at least one concept")
                if self.store is not None:
                    for ref in concepts:
                        if ref.omop_id not in self.store:
                            raise InvalidConcept(f"unknown concept omop_id {ref.omop_id}")
                        known = self.store.get_concept(ref.omop_id)
                        if known.code != ref.code:
                            raise InvalidConcept(
                                f"concept {ref.omop_id} has code {known.code!r}, not {ref.code!r}"
                            )
                new_concepts = tuple(concepts)
            decided = replace(
                entry,
                review_status=status,
                reviewer=reviewer,
                decided_at=self.clock(),
                concepts=new_concepts,
            )
            self._entries[review_id] = decided
            self._append(
                {
                    "record": "decision",
                    "review_id": review_id,
                    "status": status.value,
                    "reviewer": reviewer,
                    "concepts": [ref.to_record() for ref in new_concepts]
                    if status is ReviewStatus.MODIFIED
                    else None,
                    "decided_at": decided.decided_at,
                }
            )
            self._publish()
        return decided

    # -- persistence ----------------------------------------------------------

    def _append(self, record: dict) -> None:
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            fh.flush()

    def _publish(self) -> None:
        servable: dict[str, ReservoirEntry] = {}
        for entry in self.entries():
            if entry.review_status in SERVABLE_STATUSES:
                servable[entry.normalized_label] = entry
        self._servable = servable

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                kind = record.get("record")
                if kind == "enqueue":
                    entry = ReservoirEntry(
                        review_id=record["review_id"],
                        label=record["label"],
                        normalized_label=normalize_surface(record["label"]),
                        concepts=tuple(ConceptRef.from_record(c) for c in record["concepts"]),
                        judgement=Judgement(record["judgement"]),
                        review_status=ReviewStatus.PENDING,
                        created_at=record["created_at"],
                    )
                    self._entries[entry.review_id] = entry
                elif kind == "decision":
                    entry = self._entries.get(record["review_id"])
                    if entry is None:
                        logger.warning(
                            "%s line %d: decision for unknown review %s; skipping",
                            self.path,
                            line_number,
                            record.get("review_id"),
                        )
                        continue
                    concepts = entry.concepts
                    if record.get("concepts"):
                        concepts = tuple(ConceptRef.from_record(c) for c in record["concepts"])
                    self._entries[entry.review_id] = replace(
                        entry,
                        review_status=ReviewStatus(record["status"]),
                        reviewer=record.get("reviewer"),
                        decided_at=record.get("decided_at"),
                        concepts=concepts,
                    )
                else:
                    logger.warning("%s line %d: unknown record kind %r", self.path, line_number, kind)
        self._publish()

    def compact(self) -> None:
        """Rewrite the log with one enqueue (plus one decision) per entry."""
        if self.path is None:
            return
        with self._lock:
            temporary = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(temporary, "w", encoding="utf-8") as fh:
                for entry in self.entries():
                    fh.write(
                        json.dumps(
                            {
                                "record": "enqueue",
                                "review_id": entry.review_id,
                                "label": entry.label,
                                "judgement": entry.judgement.value,
                                "concepts": [ref.to_record() for ref in entry.concepts],
                                "created_at": entry.created_at,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
                    if entry.review_status is not ReviewStatus.PENDING:
                        fh.write(
                            json.dumps(
                                {
                                    "record": "decision",
                                    "review_id": entry.review_id,
                                    "status": entry.review_status.value,
                                    "reviewer": entry.reviewer,
                                    "concepts": [ref.to_record() for ref in entry.concepts]
                                    if entry.review_status is ReviewStatus.MODIFIED
                                    else None,
                                    "decided_at": entry.decided_at,
                                },
                                ensure_ascii=False,
                            )
                            + "\n"
                        )
            temporary.replace(self.path)

    # -- export ---------------------------------------------------------------

    def export_triples(self) -> list[Triple]:
        """Render servable entries as subject-predicate-object triples.

        Every concept contributes ``omop:<id> hasCode <code>``.  Base-role
        concepts are linked from the label with ``mapsTo``; other roles are
        linked from the first base concept with a role predicate (hasUnit,
        hasCategory, hasVisit, or associatedWith for anything else).  An
        entry holding a single base concept therefore yields exactly two
        triples.
        """
        triples: list[Triple] = []
        for entry in sorted(self._servable.values(), key=lambda e: e.normalized_label):
            base_refs = [ref for ref in entry.concepts if ref.role == "base"]
            anchor = base_refs[0] if base_refs else None
            for ref in entry.concepts:
                omop = f"omop:{ref.omop_id}"
                if ref.role == "base" or anchor is None:
                    triples.append(Triple(entry.label, "mapsTo", omop))
                else:
                    predicate = ROLE_PREDICATES.get(ref.role, "associatedWith")
                    triples.append(Triple(f"omop:{anchor.omop_id}", predicate, omop))
                triples.append(Triple(omop, "hasCode", ref.code))
        return triples

    def write_triples(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for triple in self.export_triples():
                fh.write(triple.render() + "\n")

    def export_dictionary(self) -> list[dict]:
        """Servable mappings as ``{"label", "concepts": [{"code", "omop_id"}]}``."""
        records = []
        for entry in sorted(self._servable.values(), key=lambda e: e.normalized_label):
            records.append(
                {
                    "label": entry.label,
                    "concepts": [{"code": ref.code, "omop_id": ref.omop_id} for ref in entry.concepts],
                }
            )
        return records

    def write_dictionary(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.export_dictionary(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
