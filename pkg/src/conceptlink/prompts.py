"""Prompt templates shared by the decomposer, reranker and reservoir judge.

The exact text matters: scripted providers replay completions keyed by a
fingerprint of the full prompt, and the prompt-layout tests pin these
formats.  Parsing helpers for the mock provider live here too so the formats
have a single home.
"""

from __future__ import annotations

import json
import re
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .decomposer import DataDictionaryEntry
    from .retrieval import Candidate

DECOMPOSE_INSTRUCTION = (
    "You are a clinical data curation assistant. Refine the variable described"
    " below into a clearer query, then decompose it into components for"
    " vocabulary linking."
)

DECOMPOSE_SCHEMA = (
    "Respond with a single JSON object using only these fields: refined_query,"
    " base_entity, associated_entities, categories, unit, visit, method,"
    " formula, domain_hint. Omit fields that do not apply, keep category"
    " labels without their numeric codes, and output the JSON object only."
)

DECOMPOSE_REPAIR = (
    "The previous response could not be used. Respond again with a single"
    " valid JSON object exactly as instructed, and nothing else."
)

RULES_HEADER = "Linking rules:"
EXAMPLES_HEADER = "Examples:"
ENTRY_HEADER = "Variable:"

RERANK_INSTRUCTION = (
    "Rate each candidate concept for how well it represents the query, on a"
    " scale from 1 (lowest) to 10 (highest). Respond with one line per"
    ' candidate in the form "<index>:<score>".'
)

RERANK_REPROMPT = (
    "Some scores were missing or out of range. Respond again with one line"
    ' per candidate in the form "<index>:<score>", using integer scores from'
    " 1 to 10."
)

JUDGE_INSTRUCTION = (
    "Decide whether the candidate concept correctly represents the clinical"
    " label. Answer with exactly one of: correct, partially correct,"
    " incorrect."
)

_ENTRY_FIELDS = ("label", "name", "data_type", "scale", "unit", "formula", "visit")


def serialize_entry(entry: "DataDictionaryEntry") -> str:
    """Render an entry as labeled lines; empty fields are omitted."""
    lines = []
    for field_name in _ENTRY_FIELDS:
        value = getattr(entry, field_name)
        if value:
            lines.append(f"{field_name}: {value}")
    if entry.categories:
        lines.append("categories: " + " | ".join(entry.categories))
    return "\n".join(lines)


def serialize_decomposition(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)


def build_decomposition_prompt(
    entry: "DataDictionaryEntry",
    examples: Sequence[tuple["DataDictionaryEntry", dict]],
    rules_text: str = "",
) -> str:
    """Assemble the decomposition prompt.

    Section order is fixed: instruction, then linking rules, then in-context
    examples, then the entry under a ``Variable:`` header, then the response
    schema.  Empty sections are omitted entirely.
    """
    sections = [DECOMPOSE_INSTRUCTION]
    if rules_text:
        sections.append(f"{RULES_HEADER}\n{rules_text}")
    if examples:
        rendered = []
        for example_entry, gold in examples:
            rendered.append(
                "Input:\n" + serialize_entry(example_entry) + "\nOutput: " + serialize_decomposition(gold)
            )
        sections.append(EXAMPLES_HEADER + "\n" + "\n\n".join(rendered))
    sections.append(f"{ENTRY_HEADER}\n{serialize_entry(entry)}")
    sections.append(DECOMPOSE_SCHEMA)
    return "\n\n".join(sections)


def build_rerank_prompt(
    query_text: str, candidates: Sequence["Candidate"], directives: Iterable[str] = ()
) -> str:
    """Assemble the candidate-scoring prompt.

    Layout: instruction, optional directive line, numbered candidates (name
    with vocabulary and semantic type), then the query.
    """
    if not candidates:
        raise ValueError("cannot build a rerank prompt without candidates")
    lines = [RERANK_INSTRUCTION]
    directives = [d for d in directives if d]
    if directives:
        lines.append("Directives: " + ", ".join(directives) + ".")
    lines.append("Candidates:")
    for position, candidate in enumerate(candidates, start=1):
        if candidate.semantic_type:
            lines.append(f"{position}. {candidate.name} ({candidate.vocabulary}, {candidate.semantic_type})")
        else:
            lines.append(f"{position}. {candidate.name} ({candidate.vocabulary})")
    lines.append(f"Query: {query_text}")
    return "\n".join(lines)


def build_judge_prompt(label: str, concept_name: str, vocabulary: str, code: str) -> str:
    return "\n".join(
        [
            JUDGE_INSTRUCTION,
            f"Label: {label}",
            f"Concept: {concept_name} ({vocabulary} {code})",
        ]
    )


# ---------------------------------------------------------------------------
# Parsing helpers used by the mock provider to answer its own prompts.

_LABEL_LINE = re.compile(r"^label: (.*)$", re.MULTILINE)
_JUDGE_LABEL = re.compile(r"^Label: (.*)$", re.MULTILINE)
_CANDIDATE_LINE = re.compile(r"^(\d+)\. (.*) \([^()]*\)$")


def prompt_kind(prompt: str) -> str:
    """Classify a prompt as decompose, rerank or judge (or unknown)."""
    if prompt.startswith(DECOMPOSE_INSTRUCTION):
        return "decompose"
    if prompt.startswith(RERANK_INSTRUCTION):
        return "rerank"
    if prompt.startswith(JUDGE_INSTRUCTION):
        return "judge"
    return "unknown"


def extract_entry_label(prompt: str) -> str:
    """The entry label from a decomposition prompt (last label line wins:
    earlier matches belong to in-context examples)."""
    matches = _LABEL_LINE.findall(prompt)
    return matches[-1] if matches else ""


def extract_entry_section(prompt: str) -> dict[str, object]:
    """Parse the ``Variable:`` section back into a field map."""
    marker = f"\n{ENTRY_HEADER}\n"
    start = prompt.rfind(marker)
    if start < 0:
        return {}
    section = prompt[start + len(marker) :].split("\n\n", 1)[0]
    fields: dict[str, object] = {}
    for line in section.splitlines():
        key, _, value = line.partition(": ")
        if key == "categories":
            fields[key] = value.split(" | ")
        else:
            fields[key] = value
    return fields


def extract_rerank_items(prompt: str) -> list[tuple[int, str]]:
    """Numbered (position, concept name) pairs from a rerank prompt."""
    items = []
    for line in prompt.splitlines():
        match = _CANDIDATE_LINE.match(line)
        if match:
            items.append((int(match.group(1)), match.group(2)))
    return items


def extract_rerank_query(prompt: str) -> str:
    for line in reversed(prompt.splitlines()):
        if line.startswith("Query: "):
            return line[len("Query: ") :]
    return ""


def extract_judge_label(prompt: str) -> str:
    match = _JUDGE_LABEL.search(prompt)
    return match.group(1) if match else ""
