"""Completion providers: fingerprinting, scripted replay, mock heuristics."""

from __future__ import annotations

import hashlib

import pytest

from conceptlink.decomposer import DataDictionaryEntry
from conceptlink.errors import ProviderFailure
from conceptlink.llm import (
    FunctionLLMProvider,
    MockLLMProvider,
    RecordingLLMProvider,
    ScriptedLLMProvider,
    prompt_fingerprint,
)
from conceptlink.prompts import build_decomposition_prompt, build_judge_prompt, build_rerank_prompt
from conceptlink.retrieval import Candidate


def rerank_prompt(query, names):
    candidates = [
        Candidate(
            omop_id=i,
            code=str(i),
            name=name,
            vocabulary="SNOMED",
            semantic_type="",
            matched_surface=name,
        )
        for i, name in enumerate(names, start=1)
    ]
    return build_rerank_prompt(query, candidates)


class TestFingerprint:
    def test_matches_definition(self):
        digest = hashlib.sha256(b"hello\x007").hexdigest()[:16]
        assert prompt_fingerprint("hello", 7) == digest

    def test_seed_changes_fingerprint(self):
        assert prompt_fingerprint("x", 0) != prompt_fingerprint("x", 1)

    def test_none_seed_is_distinct_from_zero(self):
        assert prompt_fingerprint("x", None) != prompt_fingerprint("x", 0)

    def test_prompt_seed_boundary_is_unambiguous(self):
        # The separator byte prevents "ab"+seed 1 colliding with "ab1"+None-ish keys.
        assert prompt_fingerprint("ab", 1) != prompt_fingerprint("ab1", 1)


class TestScripted:
    def test_replays_recorded_completion(self):
        provider = ScriptedLLMProvider({})
        provider.record("what is up", 3, "the sky")
        assert provider.complete("what is up", seed=3) == "the sky"

    def test_unknown_prompt_is_transport_failure(self):
        provider = ScriptedLLMProvider({})
        with pytest.raises(ProviderFailure, match="fingerprint"):
            provider.complete("never recorded", seed=0)

    def test_file_round_trip(self, tmp_path):
        provider = ScriptedLLMProvider({})
        provider.record("p", 0, "c")
        path = tmp_path / "script.json"
        provider.to_file(path)
        loaded = ScriptedLLMProvider.from_file(path)
        assert loaded.complete("p", seed=0) == "c"


class TestRecording:
    def test_counts_by_kind(self):
        inner = MockLLMProvider()
        provider = RecordingLLMProvider(inner)
        provider.complete(rerank_prompt("q", ["A"]))
        provider.complete(build_judge_prompt("l", "C", "SNOMED", "1"))
        provider.complete(build_judge_prompt("l2", "C", "SNOMED", "1"))
        assert provider.call_count == 3
        assert provider.calls_of_kind("rerank") == 1
        assert provider.calls_of_kind("judge") == 2
        assert provider.calls_of_kind("decompose") == 0


class TestMockDecompose:
    def prompt(self, label, **kwargs):
        entry = DataDictionaryEntry(name="v", label=label, **kwargs)
        return build_decomposition_prompt(entry, [])

    def test_scenario_map_wins(self):
        provider = MockLLMProvider(decompositions={"My Label": {"base_entity": "mapped"}})
        completion = provider.complete(self.prompt("my  label"))
        assert '"base_entity": "mapped"' in completion

    def test_fallback_echoes_metadata(self):
        provider = MockLLMProvider()
        completion = provider.complete(self.prompt("blood pressure", unit="mmHg", categories=["No", "Yes"]))
        assert '"base_entity": "blood pressure"' in completion
        assert '"unit": "mmHg"' in completion
        assert '"categories": ["No", "Yes"]' in completion

    def test_refusal_is_not_json(self):
        provider = MockLLMProvider(refusals={"bad label here"})
        completion = provider.complete(self.prompt("bad label here"))
        assert "{" not in completion

    def test_unrecognized_prompt_fails(self):
        with pytest.raises(ProviderFailure):
            MockLLMProvider().complete("free-form question")


class TestMockRerank:
    def test_exact_name_scores_ten(self):
        completion = MockLLMProvider().complete(rerank_prompt("Male", ["Male", "Humanist"]))
        assert completion.splitlines()[0] == "1:10"

    def test_stopword_insensitive_equality_scores_nine(self):
        completion = MockLLMProvider().complete(
            rerank_prompt("fear of the heart attack", ["Fear of heart attack"])
        )
        assert completion == "1:9"

    def test_token_overlap_bands(self):
        completion = MockLLMProvider().complete(
            rerank_prompt(
                "worsening heart failure",
                ["Exacerbation of heart failure", "Carvedilol"],
            )
        )
        lines = completion.splitlines()
        # Two of four content tokens shared -> jaccard 0.5 -> band 8.
        assert lines[0] == "1:8"
        assert lines[1] == "2:2"

    def test_override_beats_heuristic(self):
        provider = MockLLMProvider(rerank_overrides={"my query": {"Carvedilol": 7}})
        completion = provider.complete(rerank_prompt("my query", ["Carvedilol"]))
        assert completion == "1:7"

    def test_output_parseable_one_line_per_candidate(self):
        completion = MockLLMProvider().complete(rerank_prompt("q", ["A", "B", "C"]))
        assert len(completion.splitlines()) == 3


class TestMockJudge:
    def test_default_correct(self):
        assert MockLLMProvider().complete(build_judge_prompt("l", "C", "V", "1")) == "correct"

    def test_scenario_override(self):
        provider = MockLLMProvider(judgements={"shaky label": "partially correct"})
        assert (
            provider.complete(build_judge_prompt("shaky label", "C", "V", "1"))
            == "partially correct"
        )


def test_function_provider_passes_seed():
    provider = FunctionLLMProvider(lambda prompt, seed: f"{prompt}/{seed}")
    assert provider.complete("p", seed=4) == "p/4"
