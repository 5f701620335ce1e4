"""Controlled-vocabulary store: CSV ingestion, synonym expansion, exact lookup.

The store is immutable after construction.  ``expand_synonyms`` returns a new
store rather than mutating in place, so callers can hold both views.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DanglingReference, DuplicateConcept, MalformedRow, NotFound
from .text import normalize_surface

logger = logging.getLogger(__name__)

HIERARCHY_RELATION = "Is a"

# Relationships whose target name and synonyms are merged into the source
# concept's surface forms.  Merging is single-hop: it always reads the
# target's load-time synonyms, never synonyms gained through expansion.
DEFAULT_MERGE_RELATIONS = frozenset({"Maps to", "Trade name"})

# Vocabularies with no hierarchy, where the code itself is a surface form
# people write in data dictionaries (e.g. unit codes).
DEFAULT_FLAT_VOCABULARIES = frozenset({"UCUM"})

CONCEPT_COLUMNS = ["omop_id", "code", "name", "vocabulary", "domain", "semantic_type", "is_standard"]
SYNONYM_COLUMNS = ["omop_id", "synonym"]
RELATIONSHIP_COLUMNS = ["source_omop_id", "target_omop_id", "relation"]

_BOOL_VALUES = {"true": True, "1": True, "false": False, "0": False}


@dataclass
class Concept:
    """A single vocabulary concept.

    ``synonyms`` holds normalized surface forms and never contains the
    normalized canonical name.  ``parents`` holds omop ids linked through the
    hierarchy relation.
    """

    omop_id: int
    code: str
    name: str
    vocabulary: str
    domain: str
    semantic_type: str = ""
    synonyms: set[str] = field(default_factory=set)
    parents: set[int] = field(default_factory=set)
    is_standard: bool = True

    def surface_forms(self) -> list[str]:
        """Canonical name first, then synonyms in sorted order."""
        return [self.name, *sorted(self.synonyms)]


@dataclass(frozen=True)
class ConceptRelationship:
    source_omop_id: int
    target_omop_id: int
    relation: str


class ConceptStore:
    """Concepts indexed by omop id, (vocabulary, code) and normalized surface."""

    def __init__(
        self,
        concepts: Iterable[Concept],
        relationships: Iterable[ConceptRelationship] = (),
        merge_relations: frozenset[str] = DEFAULT_MERGE_RELATIONS,
        flat_vocabularies: frozenset[str] = DEFAULT_FLAT_VOCABULARIES,
        base_synonyms: dict[int, frozenset[str]] | None = None,
        expanded: bool = False,
    ):
        self.merge_relations = frozenset(merge_relations)
        self.flat_vocabularies = frozenset(flat_vocabularies)
        self.expanded = expanded
        self._concepts: dict[int, Concept] = {}
        self._by_code: dict[tuple[str, str], int] = {}
        for concept in concepts:
            if concept.omop_id in self._concepts:
                raise DuplicateConcept("<memory>", 0, f"duplicate omop_id {concept.omop_id}")
            code_key = (concept.vocabulary, concept.code)
            if code_key in self._by_code:
                raise DuplicateConcept("<memory>", 0, f"duplicate code {code_key!r}")
            self._concepts[concept.omop_id] = concept
            self._by_code[code_key] = concept.omop_id
        self.relationships: tuple[ConceptRelationship, ...] = tuple(relationships)
        for rel in self.relationships:
            for endpoint in (rel.source_omop_id, rel.target_omop_id):
                if endpoint not in self._concepts:
                    raise DanglingReference(f"relationship references missing omop_id {endpoint}")
        for concept in self._concepts.values():
            for parent in concept.parents:
                if parent not in self._concepts:
                    raise DanglingReference(
                        f"concept {concept.omop_id} has missing parent {parent}"
                    )
        # Load-time synonym sets; expansion always merges from these so that
        # expanding an already expanded store is a no-op.
        if base_synonyms is None:
            base_synonyms = {c.omop_id: frozenset(c.synonyms) for c in self._concepts.values()}
        self._base_synonyms = base_synonyms
        self._by_surface: dict[str, list[int]] = {}
        for concept in self._concepts.values():
            for surface in [normalize_surface(concept.name), *concept.synonyms]:
                self._by_surface.setdefault(surface, []).append(concept.omop_id)
        for ids in self._by_surface.values():
            ids.sort()

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, omop_id: int) -> bool:
        return omop_id in self._concepts

    def concepts(self) -> Iterator[Concept]:
        """All concepts in ascending omop id order."""
        for omop_id in sorted(self._concepts):
            yield self._concepts[omop_id]

    @property
    def vocabularies(self) -> set[str]:
        return {c.vocabulary for c in self._concepts.values()}

    def get_concept(self, omop_id: int) -> Concept:
        try:
            return self._concepts[omop_id]
        except KeyError:
            raise NotFound(f"no concept with omop_id {omop_id}") from None

    def lookup_by_code(self, vocabulary: str, code: str) -> Concept:
        try:
            return self._concepts[self._by_code[(vocabulary, code)]]
        except KeyError:
            raise NotFound(f"no concept with code {code!r} in {vocabulary!r}") from None

    def base_synonyms(self, omop_id: int) -> frozenset[str]:
        return self._base_synonyms.get(omop_id, frozenset())

    def find_exact(self, text: str) -> list[Concept]:
        """Concepts whose name or any synonym equals ``text`` after normalization.

        Results are ordered by ascending omop id.
        """
        return [self._concepts[i] for i in self._by_surface.get(normalize_surface(text), [])]

    def surface_count(self) -> int:
        """Total surface forms across the store (names plus synonyms)."""
        return sum(1 + len(c.synonyms) for c in self._concepts.values())


def _read_rows(path: Path, columns: list[str]) -> Iterator[tuple[int, dict[str, str]]]:
    """Yield (row_number, row_dict) pairs, validating the header and row width."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(str(path), 1, "missing header row") from None
        if header != columns:
            raise MalformedRow(str(path), 1, f"expected header {columns}, got {header}")
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise MalformedRow(
                    str(path), row_number, f"expected {len(columns)} fields, got {len(row)}"
                )
            yield row_number, dict(zip(columns, row))


def _parse_int(path: Path, row_number: int, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise MalformedRow(str(path), row_number, f"{name} must be an integer, got {raw!r}") from None


def load_vocabulary(
    concept_file: str | Path,
    synonym_file: str | Path,
    relationship_file: str | Path,
    merge_relations: frozenset[str] = DEFAULT_MERGE_RELATIONS,
    flat_vocabularies: frozenset[str] = DEFAULT_FLAT_VOCABULARIES,
) -> ConceptStore:
    """Load a concept store from the three vocabulary CSV files.

    Synonyms are normalized and deduplicated at load time; a synonym equal to
    the concept's own name is dropped.  Hierarchy rows populate ``parents``;
    all relationship rows are kept for later expansion.

    Raises:
        MalformedRow: wrong header, wrong field count or unparseable values.
        DuplicateConcept: repeated omop id or repeated (vocabulary, code) pair.
        DanglingReference: synonym or relationship against a missing concept.
    """
    concept_path = Path(concept_file)
    concepts: dict[int, Concept] = {}
    seen_codes: dict[tuple[str, str], int] = {}
    for row_number, row in _read_rows(concept_path, CONCEPT_COLUMNS):
        omop_id = _parse_int(concept_path, row_number, "omop_id", row["omop_id"])
        for column in ("code", "name", "vocabulary", "domain"):
            if not row[column].strip():
                raise MalformedRow(str(concept_path), row_number, f"{column} must not be empty")
        raw_standard = row["is_standard"].strip().casefold()
        if raw_standard not in _BOOL_VALUES:
            raise MalformedRow(
                str(concept_path), row_number, f"is_standard must be boolean, got {row['is_standard']!r}"
            )
        if omop_id in concepts:
            raise DuplicateConcept(str(concept_path), row_number, f"duplicate omop_id {omop_id}")
        code_key = (row["vocabulary"].strip(), row["code"].strip())
        if code_key in seen_codes:
            raise DuplicateConcept(
                str(concept_path),
                row_number,
                f"duplicate code {code_key[1]!r} in vocabulary {code_key[0]!r}"
                f" (first seen at row {seen_codes[code_key]})",
            )
        seen_codes[code_key] = row_number
        concepts[omop_id] = Concept(
            omop_id=omop_id,
            code=code_key[1],
            name=" ".join(row["name"].split()),
            vocabulary=code_key[0],
            domain=row["domain"].strip(),
            semantic_type=row["semantic_type"].strip(),
            is_standard=_BOOL_VALUES[raw_standard],
        )

    synonym_path = Path(synonym_file)
    for row_number, row in _read_rows(synonym_path, SYNONYM_COLUMNS):
        omop_id = _parse_int(synonym_path, row_number, "omop_id", row["omop_id"])
        if omop_id not in concepts:
            raise DanglingReference(
                f"{synonym_path}: row {row_number}: synonym for missing omop_id {omop_id}"
            )
        if not row["synonym"].strip():
            raise MalformedRow(str(synonym_path), row_number, "synonym must not be empty")
        concept = concepts[omop_id]
        normalized = normalize_surface(row["synonym"])
        if normalized != normalize_surface(concept.name):
            concept.synonyms.add(normalized)

    relationship_path = Path(relationship_file)
    relationships: list[ConceptRelationship] = []
    for row_number, row in _read_rows(relationship_path, RELATIONSHIP_COLUMNS):
        source = _parse_int(relationship_path, row_number, "source_omop_id", row["source_omop_id"])
        target = _parse_int(relationship_path, row_number, "target_omop_id", row["target_omop_id"])
        relation = row["relation"].strip()
        if not relation:
            raise MalformedRow(str(relationship_path), row_number, "relation must not be empty")
        for endpoint in (source, target):
            if endpoint not in concepts:
                raise DanglingReference(
                    f"{relationship_path}: row {row_number}: relationship references"
                    f" missing omop_id {endpoint}"
                )
        relationships.append(ConceptRelationship(source, target, relation))
        if relation == HIERARCHY_RELATION:
            concepts[source].parents.add(target)

    store = ConceptStore(
        concepts.values(),
        relationships,
        merge_relations=merge_relations,
        flat_vocabularies=flat_vocabularies,
    )
    logger.info(
        "loaded vocabulary: %d concepts, %d surface forms, %d relationships",
        len(store),
        store.surface_count(),
        len(store.relationships),
    )
    return store


def expand_synonyms(store: ConceptStore) -> ConceptStore:
    """Return a store with merged and code-derived surface forms added.

    For every relationship whose type is in ``store.merge_relations`` the
    target's name and load-time synonyms become synonyms of the source
    concept (direction matters; the target is not touched).  For concepts in
    flat vocabularies the code is registered as an additional surface form,
    making code and name interchangeable in exact lookup.  The operation is
    idempotent: it always merges from load-time synonym sets, so expanding an
    expanded store changes nothing.
    """
    expanded: dict[int, Concept] = {}
    for concept in store.concepts():
        synonyms = set(store.base_synonyms(concept.omop_id))
        if concept.vocabulary in store.flat_vocabularies:
            synonyms.add(normalize_surface(concept.code))
        expanded[concept.omop_id] = Concept(
            omop_id=concept.omop_id,
            code=concept.code,
            name=concept.name,
            vocabulary=concept.vocabulary,
            domain=concept.domain,
            semantic_type=concept.semantic_type,
            synonyms=synonyms,
            parents=set(concept.parents),
            is_standard=concept.is_standard,
        )
    for rel in store.relationships:
        if rel.relation not in store.merge_relations:
            continue
        source = expanded[rel.source_omop_id]
        target = store.get_concept(rel.target_omop_id)
        source.synonyms.add(normalize_surface(target.name))
        source.synonyms.update(store.base_synonyms(target.omop_id))
    for concept in expanded.values():
        concept.synonyms.discard(normalize_surface(concept.name))
    return ConceptStore(
        expanded.values(),
        store.relationships,
        merge_relations=store.merge_relations,
        flat_vocabularies=store.flat_vocabularies,
        base_synonyms={i: store.base_synonyms(i) for i in expanded},
        expanded=True,
    )
