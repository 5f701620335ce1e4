"""Entry validation, decomposition prompting, retries and file formats."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptlink.decomposer import (
    DataDictionaryEntry,
    DecomposedQuery,
    ExampleBank,
    decompose,
    load_dictionary,
    load_dictionary_csv,
    parse_decomposition,
    save_dictionary_csv,
    save_dictionary_json,
    select_examples,
    strip_category_code,
    validate_input,
)
from conceptlink.embeddings import HashedNgramProvider, cosine
from conceptlink.errors import DecompositionFailure, InvalidEntry, MalformedRow
from conceptlink.llm import FunctionLLMProvider, LLMProvider, RecordingLLMProvider
from conceptlink.prompts import DECOMPOSE_REPAIR

import support


def entry(label: str, **kwargs) -> DataDictionaryEntry:
    return DataDictionaryEntry(name="var", label=label, **kwargs)


class CapturingProvider(LLMProvider):
    """Records (prompt, temperature, seed) and answers from a script."""

    def __init__(self, script):
        self.script = list(script)
        self.captured: list[tuple[str, float, int | None]] = []

    def complete(self, prompt, temperature=0.0, seed=None):
        self.captured.append((prompt, temperature, seed))
        return self.script[min(len(self.captured), len(self.script)) - 1]


def refusing_provider():
    def fail(prompt, seed):
        raise AssertionError("provider must not be called")

    return FunctionLLMProvider(fail)


class TestValidateInput:
    def test_whitespace_collapsed_everywhere(self):
        result = validate_input(entry("  heart   attack ", unit=" pmol/L  "))
        assert result.label == "heart attack"
        assert result.unit == "pmol/L"

    def test_empty_label_rejected(self):
        with pytest.raises(InvalidEntry, match="var"):
            validate_input(entry("   "))

    def test_scale_casefolded(self):
        assert validate_input(entry("x y z", scale="Nominal")).scale == "nominal"

    def test_duplicate_categories_dropped_preserving_order(self):
        result = validate_input(entry("x", categories=["Yes", "No", " Yes", ""]))
        assert result.categories == ["Yes", "No"]


class TestStripCategoryCode:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("0=No", "No"),
            ("9 = Missing", "Missing"),
            ("1 : Yes", "Yes"),
            ("-1=Unknown", "Unknown"),
            ("No", "No"),
            ("7", "7"),
            (" -3 ", "-3"),
            ("B12 deficiency", "B12 deficiency"),
        ],
    )
    def test_cases(self, raw, expected):
        assert strip_category_code(raw) == expected


class TestBypass:
    def test_short_label_without_metadata_skips_model(self):
        result = decompose(validate_input(entry("sex")), refusing_provider())
        assert result.base_entity == "sex"
        assert result.refined_query == "sex"

    def test_two_token_label_still_bypasses(self):
        result = decompose(validate_input(entry("heart attack")), refusing_provider())
        assert result.base_entity == "heart attack"

    def test_metadata_forces_model(self):
        llm = RecordingLLMProvider(
            FunctionLLMProvider(lambda p, s: json.dumps({"base_entity": "sex"}))
        )
        decompose(validate_input(entry("sex", unit="n/a")), llm)
        assert llm.call_count == 1

    def test_three_token_label_forces_model(self):
        llm = RecordingLLMProvider(
            FunctionLLMProvider(lambda p, s: json.dumps({"base_entity": "level of education"}))
        )
        decompose(validate_input(entry("level of education")), llm)
        assert llm.call_count == 1

    def test_bypass_trace_record(self):
        trace = []
        decompose(validate_input(entry("sex")), refusing_provider(), trace=trace)
        assert trace == [{"stage": "decompose", "bypass": True, "attempts": 0}]


class TestParse:
    def test_plain_json(self):
        query = parse_decomposition(
            json.dumps({"base_entity": "heart attack", "visit": "baseline"}),
            validate_input(entry("heart attack thing")),
        )
        assert query.base_entity == "heart attack"
        assert query.visit == "baseline"

    def test_json_embedded_in_prose(self):
        completion = 'Sure, here you go:\n{"base_entity": "sex"}\nHope that helps.'
        query = parse_decomposition(completion, validate_input(entry("gender of subject")))
        assert query.base_entity == "sex"

    def test_refined_query_defaults_to_label(self):
        query = parse_decomposition(
            json.dumps({"base_entity": "x"}), validate_input(entry("the original label"))
        )
        assert query.refined_query == "the original label"

    def test_missing_base_entity_rejected(self):
        with pytest.raises(ValueError, match="base_entity"):
            parse_decomposition(json.dumps({"visit": "baseline"}), entry("x"))

    def test_wrongly_typed_field_rejected(self):
        with pytest.raises(ValueError, match="must be a string"):
            parse_decomposition(json.dumps({"base_entity": 3}), entry("x"))
        with pytest.raises(ValueError, match="list of strings"):
            parse_decomposition(
                json.dumps({"base_entity": "x", "categories": "Yes"}), entry("x")
            )

    def test_unknown_fields_ignored(self):
        query = parse_decomposition(
            json.dumps({"base_entity": "x", "confidence": 0.9, "note": "hi"}), entry("x")
        )
        assert query.base_entity == "x"

    def test_category_codes_stripped_and_deduplicated(self):
        query = parse_decomposition(
            json.dumps({"base_entity": "x", "categories": ["0=No", "1=Yes", "No"]}),
            entry("x"),
        )
        assert query.categories == ["No", "Yes"]

    def test_no_json_rejected(self):
        with pytest.raises(ValueError, match="no JSON object"):
            parse_decomposition("I refuse.", entry("x"))

    def test_record_round_trip_drops_empty_fields(self):
        query = DecomposedQuery(refined_query="q", base_entity="b", unit="mg")
        record = query.to_record()
        assert record == {"refined_query": "q", "base_entity": "b", "unit": "mg"}
        assert DecomposedQuery.from_record(record) == query


class TestRetries:
    def entry(self):
        return validate_input(entry("some long descriptive label"))

    def test_retry_appends_repair_and_bumps_seed(self):
        provider = CapturingProvider(["not json", "still not", json.dumps({"base_entity": "fixed"})])
        trace = []
        result = decompose(self.entry(), provider, trace=trace)
        captured = provider.captured
        assert result.base_entity == "fixed"
        assert [seed for _, _, seed in captured] == [0, 1, 2]
        assert all(temperature == 0.0 for _, temperature, _ in captured)
        assert not captured[0][0].endswith(DECOMPOSE_REPAIR)
        assert captured[1][0].endswith(DECOMPOSE_REPAIR)
        assert captured[1][0] == captured[2][0]
        assert trace[-1]["attempts"] == 3

    def test_exhausted_retries_raise(self):
        trace = []
        with pytest.raises(DecompositionFailure, match="3 attempts"):
            decompose(self.entry(), FunctionLLMProvider(lambda p, s: "nope"), trace=trace)
        assert trace[-1]["attempts"] == 3
        assert "error" in trace[-1]

    def test_first_attempt_success_stops(self):
        llm = RecordingLLMProvider(
            FunctionLLMProvider(lambda p, s: json.dumps({"base_entity": "one"}))
        )
        decompose(self.entry(), llm)
        assert llm.call_count == 1


class TestExampleSelection:
    @pytest.fixture()
    def bank(self, provider):
        labels = [
            "heart failure at baseline",
            "heart attack severity",
            "serum creatinine level",
            "metformin daily dose",
            "education level",
        ]
        pairs = [(entry(label), {"base_entity": label}) for label in labels]
        return ExampleBank(pairs, provider)

    def test_nearest_labels_selected(self, bank):
        selected = select_examples(entry("heart attack at baseline"), bank, m=2)
        labels = [e.label for e, _ in selected]
        assert labels == ["heart failure at baseline", "heart attack severity"]

    def test_zero_m_selects_nothing(self, bank):
        assert select_examples(entry("anything"), bank, m=0) == []

    def test_m_larger_than_bank_returns_all(self, bank):
        assert len(select_examples(entry("anything"), bank, m=99)) == 5

    def test_matches_brute_force_oracle(self, provider):
        rng = random.Random(7)
        words = ["heart", "blood", "serum", "dose", "level", "visit", "score", "rate"]
        labels = [" ".join(rng.sample(words, 3)) for _ in range(30)]
        pairs = [(entry(label), {}) for label in labels]
        bank = ExampleBank(pairs, provider)
        for _ in range(10):
            query = " ".join(rng.sample(words, 2))
            expected_scores = [
                (
                    -cosine(
                        provider.embed_dense(query).values,
                        provider.embed_dense(label).values,
                    ),
                    position,
                )
                for position, label in enumerate(labels)
            ]
            expected = [labels[pos] for _, pos in sorted(expected_scores)[:3]]
            got = [e.label for e, _ in select_examples(entry(query), bank, m=3)]
            assert got == expected

    def test_file_round_trip(self, bank, provider, tmp_path):
        path = tmp_path / "examples.json"
        bank.to_file(path)
        loaded = ExampleBank.from_file(path, provider)
        assert [(e.label, g) for e, g in loaded.pairs] == [
            (e.label, g) for e, g in bank.pairs
        ]


class TestDictionaryFiles:
    ENTRIES = [
        DataDictionaryEntry(
            name="hosp_mi",
            label="heart attack - main cause of hospitalization",
            data_type="integer",
            scale="nominal",
            visit="baseline",
            categories=["0=No", "1=Yes", "9=Missing"],
        ),
        DataDictionaryEntry(name="sex", label="sex"),
    ]

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "dict.csv"
        save_dictionary_csv(path, self.ENTRIES)
        assert load_dictionary_csv(path) == self.ENTRIES

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "dict.json"
        save_dictionary_json(path, self.ENTRIES)
        assert load_dictionary(path) == self.ENTRIES

    def test_dispatch_on_extension(self, tmp_path):
        csv_path = tmp_path / "dict.csv"
        save_dictionary_csv(csv_path, self.ENTRIES)
        assert load_dictionary(csv_path) == self.ENTRIES

    def test_fixture_dictionary_loads(self):
        entries = load_dictionary(support.DICTIONARY_CSV)
        assert len(entries) == 10
        assert entries[0].categories == ["0=No", "1=Yes", "9=Missing"]

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "dict.csv"
        path.write_text("name,label\na,b\n", encoding="utf-8")
        with pytest.raises(MalformedRow, match="header"):
            load_dictionary_csv(path)

    def test_non_array_json_rejected(self, tmp_path):
        path = tmp_path / "dict.json"
        path.write_text("{}", encoding="utf-8")
        with pytest.raises(MalformedRow, match="array"):
            load_dictionary(path)


@given(
    st.text(alphabet="abcdefgh ", min_size=1).filter(lambda t: t.strip()),
    st.integers(min_value=-99, max_value=99),
)
@settings(max_examples=50, deadline=None)
def test_strip_category_code_never_raises_and_strips_codes(label, code):
    stripped = strip_category_code(f"{code}={label}")
    assert "=" not in stripped or label.strip().startswith(stripped) or stripped == label.strip()
    assert strip_category_code(label) == label.strip()
