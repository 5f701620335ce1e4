"""Component mapping, entry mapping, batch runs and result serialization."""

from __future__ import annotations

import json

import pytest

from conceptlink.decomposer import DataDictionaryEntry
from conceptlink.errors import ProviderFailure
from conceptlink.llm import (
    FunctionLLMProvider,
    MockLLMProvider,
    RecordingLLMProvider,
    ScriptedLLMProvider,
)
from conceptlink.pipeline import (
    NA_LITERAL,
    STATUS_EXACT,
    STATUS_RERANKED,
    STATUS_RESERVOIR,
    build_context,
    load_results,
    make_providers,
    map_component,
    map_dictionary,
    map_entry,
    serialize_results,
)
from conceptlink.reservoir import ConceptRef, Judgement
from conceptlink.prompts import prompt_kind

import support


@pytest.fixture()
def ctx():
    return support.make_full_context()


def recording_ctx(**overrides):
    llm = RecordingLLMProvider(support.make_scenario_mock())
    return support.make_full_context(llm=llm, **overrides), llm


class TestMapComponent:
    def test_exact_match_short_circuits_reranking(self):
        ctx, llm = recording_ctx()
        outcome = map_component("heart attack", "base", ctx, domain_hint="Condition")
        assert outcome.status == STATUS_EXACT
        assert outcome.omop_id == 100
        assert outcome.code == "22298006"
        assert outcome.vocabulary == "SNOMED"
        assert outcome.confidence is None
        assert llm.calls_of_kind("rerank") == 0
        # The judge still gates reservoir admission.
        assert llm.calls_of_kind("judge") == 1

    def test_exact_match_via_expanded_synonym(self, ctx):
        outcome = map_component("man", "base", ctx)
        assert outcome.status == STATUS_EXACT
        assert outcome.omop_id == 600

    def test_unit_kind_routes_to_unit_domain(self, ctx):
        outcome = map_component("pmol/L", "unit", ctx)
        assert outcome.status == STATUS_EXACT
        assert outcome.omop_id == 400
        assert outcome.vocabulary == "UCUM"

    def test_reranked_selection_carries_confidence(self, ctx):
        outcome = map_component("heart failure worsening", "base", ctx, domain_hint="Condition")
        assert outcome.status == STATUS_RERANKED
        assert outcome.omop_id == 750
        assert outcome.confidence == 1.0

    def test_all_candidates_filtered_yields_na(self, ctx):
        outcome = map_component("zzz qqq xxyzzy glorp", "base", ctx)
        assert outcome.status == NA_LITERAL
        assert outcome.omop_id is None

    def test_na_is_never_enqueued(self):
        # Score every candidate 1 so consensus always fails.
        llm = MockLLMProvider(
            rerank_overrides={"fear of attack": {
                "Fear of heart attack": 1, "Myocardial infarction": 1,
                "History of myocardial infarction": 1, "Exacerbation of heart failure": 1,
                "Systolic heart failure": 1, "Clinical finding": 1,
                "Reason for hospitalization": 1,
            }}
        )
        ctx = support.make_full_context(llm=llm)
        outcome = map_component("fear of attack", "base", ctx)
        assert outcome.status == NA_LITERAL
        assert ctx.reservoir.entries() == []

    def test_non_na_outcome_is_enqueued_pending(self, ctx):
        map_component("heart attack", "base", ctx)
        waiting, total = ctx.reservoir.pending()
        assert total == 1
        assert waiting[0].label == "heart attack"
        assert waiting[0].concepts == (ConceptRef(code="22298006", omop_id=100, role="base"),)

    def test_incorrect_judgement_blocks_enqueue_but_keeps_outcome(self):
        llm = MockLLMProvider(judgements={"heart attack": "incorrect"})
        ctx = support.make_full_context(llm=llm)
        outcome = map_component("heart attack", "base", ctx)
        assert outcome.status == STATUS_EXACT
        assert outcome.omop_id == 100
        assert ctx.reservoir.entries() == []

    def test_judge_transport_failure_keeps_outcome_skips_enqueue(self):
        class JudgeDown(MockLLMProvider):
            def _judge(self, prompt):
                raise ProviderFailure("judge offline")

        ctx = support.make_full_context(llm=JudgeDown())
        from conceptlink.pipeline import _Tracer

        tracer = _Tracer()
        outcome = map_component("heart attack", "base", ctx, tracer=tracer)
        assert outcome.status == STATUS_EXACT
        assert ctx.reservoir.entries() == []
        store_records = [r for r in tracer.records if r["stage"] == "store"]
        assert store_records and store_records[0]["enqueued"] is False
        assert "error" in store_records[0]

    def test_reservoir_hit_skips_everything(self, counting_provider_factory):
        llm = RecordingLLMProvider(support.make_scenario_mock())
        ctx = support.make_full_context(llm=llm)
        review_id = ctx.reservoir.enqueue(
            "heart attack",
            [ConceptRef(code="22298006", omop_id=100)],
            Judgement.CORRECT,
        )
        ctx.reservoir.apply_decision(review_id, "approve", reviewer="ann")
        counting = counting_provider_factory(ctx.embedding_provider)
        ctx = ctx.with_options(embedding_provider=counting)
        outcome = map_component("Heart  ATTACK", "base", ctx)
        assert outcome.status == STATUS_RESERVOIR
        assert outcome.omop_id == 100
        assert outcome.vocabulary == "SNOMED"
        assert llm.call_count == 0
        assert counting.dense_calls == 0 and counting.sparse_calls == 0

    def test_pending_entry_is_not_served(self, ctx):
        ctx.reservoir.enqueue(
            "heart attack", [ConceptRef(code="22298006", omop_id=100)], Judgement.CORRECT
        )
        outcome = map_component("heart attack", "base", ctx)
        assert outcome.status == STATUS_EXACT

    def test_retrieval_failure_becomes_na_with_trace(self, stub_provider_factory):
        class Broken(type(stub_provider_factory({"x": [1.0]}))):
            pass

        ctx, _ = recording_ctx()

        class FailingProvider:
            def embed_dense(self, text):
                raise ProviderFailure("embedding service down")

            def embed_sparse(self, text):
                raise ProviderFailure("embedding service down")

        from conceptlink.pipeline import _Tracer
        from conceptlink.retrieval import RetrievalIndex

        broken_index = RetrievalIndex(ctx.store, FailingProvider(), ctx.index.entries, ctx.index.dim)
        ctx = ctx.with_options(index=broken_index)
        tracer = _Tracer()
        outcome = map_component("heart attack", "base", ctx, tracer=tracer)
        assert outcome.status == NA_LITERAL
        retrieve_records = [r for r in tracer.records if r["stage"] == "retrieve"]
        assert retrieve_records and "error" in retrieve_records[0]

    def test_domain_hint_applies_only_to_base_kind(self, ctx):
        # As an associated component, a Condition hint must not drop the
        # LOINC candidate that wins for "sex".
        outcome = map_component("sex", "associated", ctx, domain_hint="Condition")
        assert outcome.omop_id == 730
        assert outcome.vocabulary == "LOINC"

    def test_drug_routing_prefers_lower_omop_id_on_duplicate_names(self, ctx):
        # Both ATC 300 and RxNorm 301 carry the surface "Carvedilol"; the
        # exact-match scan follows ranking order, where ties break by omop id.
        outcome = map_component("Carvedilol", "base", ctx, domain_hint="Drug")
        assert outcome.status == STATUS_EXACT
        assert outcome.omop_id == 300


class TestMapEntry:
    def entry(self, **kwargs):
        return DataDictionaryEntry(**kwargs)

    def test_empty_label_yields_entry_na(self, ctx):
        result = map_entry(self.entry(name="bad", label="   "), ctx, trace_enabled=True)
        assert result.decomposition is None
        assert set(result.component_results) == {"entry"}
        assert result.component_results["entry"].status == NA_LITERAL
        assert any("error" in r for r in result.trace)

    def test_decomposition_failure_yields_entry_na(self, ctx):
        result = map_entry(
            self.entry(name="fail_dec", label="complex unmappable descriptor thing"), ctx
        )
        assert set(result.component_results) == {"entry"}
        assert result.component_results["entry"].status == NA_LITERAL

    def test_component_key_scheme_and_order(self, ctx):
        result = map_entry(
            self.entry(
                name="hosp_mi",
                label="heart attack - main cause of hospitalization",
                data_type="integer",
                scale="nominal",
                visit="baseline",
                categories=["0=No", "1=Yes", "9=Missing"],
            ),
            ctx,
        )
        assert list(result.component_results) == [
            "base_entity",
            "associated_entity:Hospitalization Reason",
            "category:Yes",
            "category:No",
            "category:Missing",
            "visit",
        ]

    def test_worked_example_outcomes(self, ctx):
        result = map_entry(
            self.entry(
                name="hosp_mi",
                label="heart attack - main cause of hospitalization",
                data_type="integer",
                scale="nominal",
                visit="baseline",
                categories=["0=No", "1=Yes", "9=Missing"],
            ),
            ctx,
        )
        outcomes = {k: (o.status, o.omop_id) for k, o in result.component_results.items()}
        assert outcomes == {
            "base_entity": (STATUS_EXACT, 100),
            "associated_entity:Hospitalization Reason": (STATUS_RERANKED, 700),
            "category:Yes": (STATUS_EXACT, 710),
            "category:No": (STATUS_EXACT, 711),
            "category:Missing": (STATUS_EXACT, 712),
            "visit": (STATUS_EXACT, 720),
        }
        assert result.decomposition.base_entity == "heart attack"
        assert result.decomposition.categories == ["Yes", "No", "Missing"]

    def test_trace_disabled_by_default(self, ctx):
        result = map_entry(self.entry(name="sex", label="sex"), ctx)
        assert result.trace is None

    def test_trace_sequence_is_deterministic(self, ctx):
        result = map_entry(self.entry(name="sex", label="sex"), ctx, trace_enabled=True)
        seqs = [r["seq"] for r in result.trace]
        assert seqs == list(range(1, len(seqs) + 1))
        assert all("time" not in r and "timestamp" not in r for r in result.trace)


class TestMapDictionary:
    def entries(self):
        return [
            DataDictionaryEntry(name="sex", label="sex"),
            DataDictionaryEntry(name="bad", label=""),
            DataDictionaryEntry(name="drug", label="Carvedilol"),
        ]

    def test_order_preserved_with_failures_inline(self, ctx):
        results = map_dictionary(self.entries(), ctx)
        assert [r.entry.name for r in results] == ["sex", "bad", "drug"]
        assert results[1].component_results["entry"].status == NA_LITERAL
        assert results[0].component_results["base_entity"].omop_id == 730

    def test_progress_monotone_and_complete(self, ctx):
        seen = []
        map_dictionary(self.entries(), ctx, progress=lambda done, total: seen.append((done, total)))
        assert seen == [(1, 3), (2, 3), (3, 3)]

    def test_parallel_progress_reaches_total(self, ctx):
        seen = []
        map_dictionary(
            self.entries(), ctx, parallelism=3,
            progress=lambda done, total: seen.append((done, total)),
        )
        assert len(seen) == 3
        assert [done for done, _ in seen] == [1, 2, 3]

    def test_parallelism_validation(self, ctx):
        with pytest.raises(ValueError):
            map_dictionary([], ctx, parallelism=0)

    def test_parallel_results_equal_serial(self):
        entries = support.load_full_store  # placeholder to appease linters
        from conceptlink.decomposer import load_dictionary

        dictionary = load_dictionary(support.DICTIONARY_CSV)
        scripted = ScriptedLLMProvider.from_file(support.SCRIPTED_LLM_JSON)
        serial_ctx = support.make_full_context(llm=scripted)
        serial = serialize_results(map_dictionary(dictionary, serial_ctx))
        scripted2 = ScriptedLLMProvider.from_file(support.SCRIPTED_LLM_JSON)
        parallel_ctx = support.make_full_context(llm=scripted2)
        parallel = serialize_results(map_dictionary(dictionary, parallel_ctx, parallelism=4))
        assert serial == parallel


class TestSerialization:
    def test_round_trip_preserves_bytes(self, ctx, tmp_path):
        results = map_dictionary([DataDictionaryEntry(name="sex", label="sex")], ctx)
        first = serialize_results(results)
        path = tmp_path / "results.jsonl"
        path.write_text(first, encoding="utf-8")
        records = load_results(path)
        redumped = "\n".join(json.dumps(r, ensure_ascii=False) for r in records) + "\n"
        assert redumped == first

    def test_trailing_newline_and_one_line_per_record(self, ctx):
        results = map_dictionary(
            [DataDictionaryEntry(name="sex", label="sex"),
             DataDictionaryEntry(name="drug", label="Carvedilol")],
            ctx,
        )
        text = serialize_results(results)
        assert text.endswith("\n")
        assert len(text.splitlines()) == 2

    def test_empty_results_serialize_to_empty_string(self):
        assert serialize_results([]) == ""

    def test_record_field_order(self, ctx):
        results = map_dictionary([DataDictionaryEntry(name="sex", label="sex")], ctx)
        record = json.loads(serialize_results(results).splitlines()[0])
        assert list(record) == ["name", "label", "decomposition", "component_results"]

    def test_trace_appended_last_when_enabled(self, ctx):
        results = map_dictionary(
            [DataDictionaryEntry(name="sex", label="sex")], ctx, trace_enabled=True
        )
        record = json.loads(serialize_results(results, include_trace=True).splitlines()[0])
        assert list(record)[-1] == "trace"


class TestProviders:
    def test_mock_spec(self):
        embedding, llm = make_providers("mock")
        assert embedding.embed_dense("x").dim == 256
        assert prompt_kind("nonsense") == "unknown"
        assert isinstance(llm, MockLLMProvider)

    def test_scripted_spec(self):
        _, llm = make_providers(f"scripted:{support.SCRIPTED_LLM_JSON}")
        assert isinstance(llm, ScriptedLLMProvider)
        assert len(llm.completions) == 31

    def test_wire_spec_requires_urls(self):
        with pytest.raises(ValueError, match="embed-url"):
            make_providers("wire")

    def test_unknown_spec(self):
        with pytest.raises(ValueError, match="unknown provider"):
            make_providers("telepathy")


class TestBuildContext:
    def test_full_kb_loads(self, ctx):
        assert len(ctx.store) == 20
        assert ctx.example_bank is not None and len(ctx.example_bank) == 5
        assert ctx.rules.routes["Condition"] == ["SNOMED"]
        assert ctx.reservoir is not None

    def test_missing_rules_file_falls_back_to_defaults(self, tmp_path, provider):
        kb = tmp_path / "kb"
        kb.mkdir()
        for name in ("concepts.csv", "synonyms.csv", "relationships.csv"):
            (kb / name).write_text(
                (support.KB_SMALL_DIR / name).read_text(encoding="utf-8"), encoding="utf-8"
            )
        ctx = build_context(kb, provider, MockLLMProvider())
        assert ctx.rules.routes["Drug"] == ["RxNorm", "ATC"]
        assert ctx.example_bank is None

    def test_precomputed_embeddings_used(self, tmp_path, provider):
        import numpy as np

        from conceptlink.embeddings import save_dense_file

        kb = tmp_path / "kb"
        kb.mkdir()
        for name in ("concepts.csv", "synonyms.csv", "relationships.csv"):
            (kb / name).write_text(
                (support.KB_SMALL_DIR / name).read_text(encoding="utf-8"), encoding="utf-8"
            )
        pinned = np.zeros(256)
        pinned[7] = 1.0
        save_dense_file(kb / "embeddings.tsv", 256, {(100, "heart attack"): pinned})
        ctx = build_context(kb, provider, MockLLMProvider())
        entry = next(e for e in ctx.index.entries if e.surface == "heart attack")
        assert np.array_equal(entry.dense.values, pinned)

    def test_with_options_shares_heavy_state(self, ctx):
        tuned = ctx.with_options(k=5, tau=0.7)
        assert tuned.index is ctx.index
        assert tuned.store is ctx.store
        assert (tuned.k, tuned.tau) == (5, 0.7)
        assert (ctx.k, ctx.tau) == (10, 0.5)

    def test_context_validation(self, ctx):
        with pytest.raises(ValueError):
            ctx.with_options(k=0)
        with pytest.raises(ValueError):
            ctx.with_options(tau=1.5)
