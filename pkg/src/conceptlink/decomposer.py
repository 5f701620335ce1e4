"""Query refinement and decomposition of data-dictionary entries.

An entry's free-text label plus structured metadata is decomposed into the
components that get linked separately: the base entity, associated entities,
categories, unit, visit, method and formula.  Decomposition is an LLM call
with in-context examples selected by embedding similarity; trivially short
labels with no metadata bypass the model entirely.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .embeddings import EmbeddingProvider, cosine
from .errors import DecompositionFailure, InvalidEntry, MalformedRow
from .llm import LLMProvider
from .prompts import DECOMPOSE_REPAIR, build_decomposition_prompt

logger = logging.getLogger(__name__)

DEFAULT_EXAMPLE_COUNT = 3
MAX_ATTEMPTS = 3

# Labels this short carry no context worth refining; with no metadata either,
# the label itself is the base entity.
BYPASS_TOKEN_LIMIT = 2

DICTIONARY_COLUMNS = ["name", "label", "data_type", "scale", "unit", "formula", "visit", "categories"]

_CATEGORY_CODE = re.compile(r"^\s*[+-]?\d+\s*[=:]\s*(.*)$")
_NUMERIC_LABEL = re.compile(r"^\s*[+-]?\d+\s*$")


@dataclass
class DataDictionaryEntry:
    """One variable from a study data dictionary."""

    name: str
    label: str
    data_type: str = ""
    scale: str = ""
    unit: str = ""
    formula: str = ""
    visit: str = ""
    categories: list[str] = field(default_factory=list)

    @property
    def has_metadata(self) -> bool:
        return bool(
            self.data_type or self.scale or self.unit or self.formula or self.visit or self.categories
        )

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "label": self.label,
            "data_type": self.data_type,
            "scale": self.scale,
            "unit": self.unit,
            "formula": self.formula,
            "visit": self.visit,
            "categories": list(self.categories),
        }

    @classmethod
    def from_record(cls, record: dict) -> "DataDictionaryEntry":
        return cls(
            name=str(record.get("name", "")),
            label=str(record.get("label", "")),
            data_type=str(record.get("data_type", "")),
            scale=str(record.get("scale", "")),
            unit=str(record.get("unit", "")),
            formula=str(record.get("formula", "")),
            visit=str(record.get("visit", "")),
            categories=[str(c) for c in record.get("categories", [])],
        )


_QUERY_FIELDS = (
    "refined_query",
    "base_entity",
    "associated_entities",
    "categories",
    "unit",
    "visit",
    "method",
    "formula",
    "domain_hint",
)


@dataclass
class DecomposedQuery:
    """Structured output of decomposition; empty fields mean "not present"."""

    refined_query: str
    base_entity: str
    associated_entities: list[str] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)
    unit: str = ""
    visit: str = ""
    method: str = ""
    formula: str = ""
    domain_hint: str = ""

    def to_record(self) -> dict:
        """Serialize with fixed field order, omitting empty fields."""
        record: dict = {}
        for name in _QUERY_FIELDS:
            value = getattr(self, name)
            if value:
                record[name] = list(value) if isinstance(value, list) else value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "DecomposedQuery":
        return cls(
            refined_query=str(record.get("refined_query", "")),
            base_entity=str(record.get("base_entity", "")),
            associated_entities=[str(v) for v in record.get("associated_entities", [])],
            categories=[str(v) for v in record.get("categories", [])],
            unit=str(record.get("unit", "")),
            visit=str(record.get("visit", "")),
            method=str(record.get("method", "")),
            formula=str(record.get("formula", "")),
            domain_hint=str(record.get("domain_hint", "")),
        )


def _clean(value: str) -> str:
    return " ".join(value.split())


def _dedup(values: list[str]) -> list[str]:
    seen = set()
    result = []
    for value in values:
        if value and value not in seen:
            seen.add(value)
            result.append(value)
    return result


def validate_input(entry: DataDictionaryEntry) -> DataDictionaryEntry:
    """Normalize whitespace in every field and drop duplicate categories.

    Raises:
        InvalidEntry: the label is empty after trimming.
    """
    label = _clean(entry.label)
    if not label:
        raise InvalidEntry(f"entry {entry.name!r} has an empty label")
    return DataDictionaryEntry(
        name=_clean(entry.name),
        label=label,
        data_type=_clean(entry.data_type),
        scale=_clean(entry.scale).casefold(),
        unit=_clean(entry.unit),
        formula=_clean(entry.formula),
        visit=_clean(entry.visit),
        categories=_dedup([_clean(c) for c in entry.categories]),
    )


def strip_category_code(category: str) -> str:
    """Remove a leading numeric code: "0=No" becomes "No".

    A purely numeric label is left as-is; stripping it would erase the value.
    """
    if _NUMERIC_LABEL.match(category):
        return category.strip()
    match = _CATEGORY_CODE.match(category)
    return match.group(1).strip() if match else category.strip()


class ExampleBank:
    """In-context examples with dense label embeddings for similarity selection."""

    def __init__(
        self,
        pairs: list[tuple[DataDictionaryEntry, dict]],
        provider: EmbeddingProvider,
    ):
        self.pairs = list(pairs)
        self.provider = provider
        self.vectors = [provider.embed_dense(entry.label).values for entry, _ in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_file(cls, path: str | Path, provider: EmbeddingProvider) -> "ExampleBank":
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
        pairs = [
            (DataDictionaryEntry.from_record(record["input"]), dict(record["output"]))
            for record in records
        ]
        return cls(pairs, provider)

    def to_file(self, path: str | Path) -> None:
        records = [{"input": entry.to_record(), "output": gold} for entry, gold in self.pairs]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(records, fh, indent=2, ensure_ascii=False)
            fh.write("\n")


def select_examples(
    entry: DataDictionaryEntry, bank: ExampleBank, m: int = DEFAULT_EXAMPLE_COUNT
) -> list[tuple[DataDictionaryEntry, dict]]:
    """The m bank examples whose labels are nearest the entry's label.

    Similarity is cosine over the bank's embedding provider; ties keep bank
    order.  Asking for more examples than the bank holds returns them all.
    """
    if m <= 0 or not bank.pairs:
        return []
    query = bank.provider.embed_dense(entry.label).values
    scored = [
        (cosine(query, vector), position)
        for position, vector in enumerate(bank.vectors)
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [bank.pairs[position] for _, position in scored[:m]]


def _extract_json_object(completion: str) -> dict:
    try:
        parsed = json.loads(completion)
        if isinstance(parsed, dict):
            return parsed
    except json.JSONDecodeError:
        pass
    start = completion.find("{")
    end = completion.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in completion")
    parsed = json.loads(completion[start : end + 1])
    if not isinstance(parsed, dict):
        raise ValueError("completion JSON is not an object")
    return parsed


def parse_decomposition(completion: str, entry: DataDictionaryEntry) -> DecomposedQuery:
    """Parse a model completion into a validated DecomposedQuery.

    Unknown fields are ignored.  Category labels have numeric codes stripped
    and lists are deduplicated preserving order.  ``refined_query`` defaults
    to the entry label when the model omits it.

    Raises:
        ValueError: the completion has no JSON object, a missing or empty
            base_entity, or wrongly typed fields.
    """
    raw = _extract_json_object(completion)
    known = {name: raw[name] for name in _QUERY_FIELDS if name in raw}
    ignored = set(raw) - set(known)
    if ignored:
        logger.debug("ignoring unexpected decomposition fields: %s", sorted(ignored))
    for name in ("refined_query", "base_entity", "unit", "visit", "method", "formula", "domain_hint"):
        if name in known and not isinstance(known[name], str):
            raise ValueError(f"field {name} must be a string")
    for name in ("associated_entities", "categories"):
        if name in known:
            if not isinstance(known[name], list) or not all(isinstance(v, str) for v in known[name]):
                raise ValueError(f"field {name} must be a list of strings")
    base_entity = _clean(known.get("base_entity", ""))
    if not base_entity:
        raise ValueError("base_entity is missing or empty")
    return DecomposedQuery(
        refined_query=_clean(known.get("refined_query", "")) or entry.label,
        base_entity=base_entity,
        associated_entities=_dedup([_clean(v) for v in known.get("associated_entities", [])]),
        categories=_dedup([strip_category_code(_clean(v)) for v in known.get("categories", [])]),
        unit=_clean(known.get("unit", "")),
        visit=_clean(known.get("visit", "")),
        method=_clean(known.get("method", "")),
        formula=_clean(known.get("formula", "")),
        domain_hint=_clean(known.get("domain_hint", "")),
    )


def decompose(
    entry: DataDictionaryEntry,
    provider: LLMProvider,
    bank: ExampleBank | None = None,
    m: int = DEFAULT_EXAMPLE_COUNT,
    rules_text: str = "",
    trace: list | None = None,
) -> DecomposedQuery:
    """Decompose a validated entry, retrying malformed completions.

    The first attempt sends the base prompt at temperature 0.  Each retry
    appends a repair instruction and bumps the seed, for at most three
    attempts in total.  Entries whose label has at most two whitespace tokens
    and whose metadata is empty never reach the model: the label is returned
    as both refined query and base entity.

    Raises:
        DecompositionFailure: no attempt produced a valid decomposition.
    """
    if len(entry.label.split()) <= BYPASS_TOKEN_LIMIT and not entry.has_metadata:
        if trace is not None:
            trace.append({"stage": "decompose", "bypass": True, "attempts": 0})
        return DecomposedQuery(refined_query=entry.label, base_entity=entry.label)
    examples = select_examples(entry, bank, m) if bank is not None else []
    base_prompt = build_decomposition_prompt(entry, examples, rules_text)
    retry_prompt = base_prompt + "\n\n" + DECOMPOSE_REPAIR
    last_error = "no attempts made"
    for attempt in range(MAX_ATTEMPTS):
        prompt = base_prompt if attempt == 0 else retry_prompt
        completion = provider.complete(prompt, temperature=0.0, seed=attempt)
        try:
            query = parse_decomposition(completion, entry)
        except (ValueError, json.JSONDecodeError) as exc:
            last_error = str(exc)
            logger.debug("decomposition attempt %d failed for %r: %s", attempt + 1, entry.label, exc)
            continue
        if trace is not None:
            trace.append({"stage": "decompose", "bypass": False, "attempts": attempt + 1})
        return query
    if trace is not None:
        trace.append(
            {"stage": "decompose", "bypass": False, "attempts": MAX_ATTEMPTS, "error": last_error}
        )
    raise DecompositionFailure(
        f"no valid decomposition for {entry.label!r} after {MAX_ATTEMPTS} attempts: {last_error}"
    )


# ---------------------------------------------------------------------------
# Data-dictionary file formats.

def load_dictionary_csv(path: str | Path) -> list[DataDictionaryEntry]:
    """Read entries from CSV with columns ``name,label,data_type,scale,unit,
    formula,visit,categories``; categories are pipe-separated."""
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(str(path), 1, "missing header row") from None
        if header != DICTIONARY_COLUMNS:
            raise MalformedRow(str(path), 1, f"expected header {DICTIONARY_COLUMNS}, got {header}")
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DICTIONARY_COLUMNS):
                raise MalformedRow(
                    str(path), row_number, f"expected {len(DICTIONARY_COLUMNS)} fields, got {len(row)}"
                )
            record = dict(zip(DICTIONARY_COLUMNS, row))
            categories = [c for c in record["categories"].split("|") if c.strip()]
            entries.append(
                DataDictionaryEntry(
                    name=record["name"],
                    label=record["label"],
                    data_type=record["data_type"],
                    scale=record["scale"],
                    unit=record["unit"],
                    formula=record["formula"],
                    visit=record["visit"],
                    categories=categories,
                )
            )
    return entries


def save_dictionary_csv(path: str | Path, entries: list[DataDictionaryEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DICTIONARY_COLUMNS)
        for entry in entries:
            writer.writerow(
                [
                    entry.name,
                    entry.label,
                    entry.data_type,
                    entry.scale,
                    entry.unit,
                    entry.formula,
                    entry.visit,
                    "|".join(entry.categories),
                ]
            )


def load_dictionary_json(path: str | Path) -> list[DataDictionaryEntry]:
    """Read entries from a JSON array of records mirroring the CSV columns."""
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise MalformedRow(str(path), 1, "expected a JSON array of entry records")
    return [DataDictionaryEntry.from_record(record) for record in records]


def save_dictionary_json(path: str | Path, entries: list[DataDictionaryEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([entry.to_record() for entry in entries], fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_dictionary(path: str | Path) -> list[DataDictionaryEntry]:
    """Dispatch on file extension: .json or .csv."""
    path = Path(path)
    if path.suffix.casefold() == ".json":
        return load_dictionary_json(path)
    return load_dictionary_csv(path)
