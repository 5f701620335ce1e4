"""Prompt assembly: section ordering, entry rendering, parsing helpers."""

from __future__ import annotations

import pytest

from conceptlink.decomposer import DataDictionaryEntry
from conceptlink.prompts import (
    DECOMPOSE_INSTRUCTION,
    DECOMPOSE_SCHEMA,
    ENTRY_HEADER,
    EXAMPLES_HEADER,
    JUDGE_INSTRUCTION,
    RERANK_INSTRUCTION,
    RULES_HEADER,
    build_decomposition_prompt,
    build_judge_prompt,
    build_rerank_prompt,
    extract_entry_label,
    extract_entry_section,
    extract_judge_label,
    extract_rerank_items,
    extract_rerank_query,
    prompt_kind,
    serialize_entry,
)
from conceptlink.retrieval import Candidate

import support

ENTRY = DataDictionaryEntry(
    name="ntprobnp",
    label="NT-proBNP",
    data_type="float",
    unit="pmol/L",
    visit="baseline",
)

EXAMPLE = (
    DataDictionaryEntry(name="ex", label="serum creatinine level"),
    {"refined_query": "serum creatinine level", "base_entity": "serum creatinine"},
)


def candidate(omop_id=760, name="History of myocardial infarction", semantic_type="Clinical Finding"):
    return Candidate(
        omop_id=omop_id,
        code="399211009",
        name=name,
        vocabulary="SNOMED",
        semantic_type=semantic_type,
        matched_surface=name.casefold(),
    )


class TestSerializeEntry:
    def test_field_order_and_omission(self):
        text = serialize_entry(ENTRY)
        assert text == (
            "label: NT-proBNP\nname: ntprobnp\ndata_type: float\nunit: pmol/L\nvisit: baseline"
        )

    def test_categories_joined_with_pipes(self):
        entry = DataDictionaryEntry(name="x", label="y", categories=["No", "Yes"])
        assert serialize_entry(entry).endswith("categories: No | Yes")


class TestDecompositionPrompt:
    def test_section_order(self):
        prompt = build_decomposition_prompt(ENTRY, [EXAMPLE], rules_text="Condition -> SNOMED")
        positions = [
            prompt.index(DECOMPOSE_INSTRUCTION),
            prompt.index(RULES_HEADER),
            prompt.index(EXAMPLES_HEADER),
            prompt.index(f"{ENTRY_HEADER}\nlabel: NT-proBNP"),
            prompt.index(DECOMPOSE_SCHEMA),
        ]
        assert positions == sorted(positions)

    def test_empty_sections_omitted(self):
        prompt = build_decomposition_prompt(ENTRY, [])
        assert RULES_HEADER not in prompt
        assert EXAMPLES_HEADER not in prompt

    def test_example_rendering(self):
        prompt = build_decomposition_prompt(ENTRY, [EXAMPLE])
        assert (
            'Input:\nlabel: serum creatinine level\nname: ex\nOutput: {"refined_query":'
            ' "serum creatinine level", "base_entity": "serum creatinine"}'
        ) in prompt

    def test_round_trip_through_extractors(self):
        prompt = build_decomposition_prompt(ENTRY, [EXAMPLE])
        assert prompt_kind(prompt) == "decompose"
        # The example's label appears first; the entry's own label must win.
        assert extract_entry_label(prompt) == "NT-proBNP"
        section = extract_entry_section(prompt)
        assert section["unit"] == "pmol/L"
        assert section["visit"] == "baseline"


class TestRerankPrompt:
    def test_matches_golden_file(self):
        cand = candidate()
        cand.directives = ("past-condition",)
        prompt = build_rerank_prompt("history of MI", [cand], directives=cand.directives)
        golden = support.GOLDEN_RERANK_PROMPT.read_text(encoding="utf-8")
        assert prompt + "\n" == golden

    def test_semantic_type_omitted_when_empty(self):
        prompt = build_rerank_prompt("x", [candidate(semantic_type="")])
        assert "1. History of myocardial infarction (SNOMED)" in prompt

    def test_no_directive_line_without_directives(self):
        prompt = build_rerank_prompt("x", [candidate()])
        assert "Directives:" not in prompt

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            build_rerank_prompt("x", [])

    def test_round_trip_through_extractors(self):
        prompt = build_rerank_prompt("history of MI", [candidate(), candidate(100, "Myocardial infarction")])
        assert prompt_kind(prompt) == "rerank"
        assert extract_rerank_query(prompt) == "history of MI"
        assert extract_rerank_items(prompt) == [
            (1, "History of myocardial infarction"),
            (2, "Myocardial infarction"),
        ]


class TestJudgePrompt:
    def test_layout(self):
        prompt = build_judge_prompt("heart attack", "Myocardial infarction", "SNOMED", "22298006")
        assert prompt == (
            JUDGE_INSTRUCTION
            + "\nLabel: heart attack\nConcept: Myocardial infarction (SNOMED 22298006)"
        )
        assert prompt_kind(prompt) == "judge"
        assert extract_judge_label(prompt) == "heart attack"


def test_prompt_kind_unknown():
    assert prompt_kind("tell me a story") == "unknown"


def test_instruction_texts_differ():
    kinds = {DECOMPOSE_INSTRUCTION, RERANK_INSTRUCTION, JUDGE_INSTRUCTION}
    assert len(kinds) == 3
