"""Shared fixture builders used by the test suite and the fixture generator."""

from __future__ import annotations

from pathlib import Path

from conceptlink.embeddings import HashedNgramProvider
from conceptlink.llm import MockLLMProvider
from conceptlink.pipeline import PipelineContext, build_context
from conceptlink.vocab import expand_synonyms, load_vocabulary

DATA_DIR = Path(__file__).parent / "data"
KB_DIR = DATA_DIR / "kb"
KB_SMALL_DIR = DATA_DIR / "kb_small"
DICTIONARY_CSV = DATA_DIR / "dictionary.csv"
GOLD_CSV = DATA_DIR / "gold.csv"
SCRIPTED_LLM_JSON = DATA_DIR / "scripted_llm.json"
GOLDEN_RESULTS = DATA_DIR / "golden_results.jsonl"
GOLDEN_RERANK_PROMPT = DATA_DIR / "rerank_prompt_golden.txt"


def load_small_store(expanded: bool = True):
    store = load_vocabulary(
        KB_SMALL_DIR / "concepts.csv",
        KB_SMALL_DIR / "synonyms.csv",
        KB_SMALL_DIR / "relationships.csv",
    )
    return expand_synonyms(store) if expanded else store


def load_full_store(expanded: bool = True):
    store = load_vocabulary(
        KB_DIR / "concepts.csv", KB_DIR / "synonyms.csv", KB_DIR / "relationships.csv"
    )
    return expand_synonyms(store) if expanded else store


def make_scenario_mock() -> MockLLMProvider:
    """The mock provider configured for the fixture dictionary's entries."""
    return MockLLMProvider(
        decompositions={
            "heart attack - main cause of hospitalization": {
                "refined_query": "heart attack as the main cause of hospitalization",
                "base_entity": "heart attack",
                "associated_entities": ["Hospitalization Reason"],
                "categories": ["Yes", "No", "Missing"],
                "visit": "baseline",
                "domain_hint": "Condition",
            },
            "NT-proBNP": {
                "refined_query": "N-terminal pro b-type natriuretic peptide level",
                "base_entity": "NT-proBNP",
                "unit": "pmol/L",
                "visit": "baseline",
                "domain_hint": "Measurement",
            },
            "heart failure worsening": {
                "refined_query": "worsening of heart failure",
                "base_entity": "heart failure worsening",
                "domain_hint": "Condition",
            },
            "zzz qqq xxyzzy glorp": {"base_entity": "zzz qqq xxyzzy glorp"},
            "history of MI": {
                "refined_query": "history of myocardial infarction",
                "base_entity": "history of MI",
                "domain_hint": "Condition",
            },
        },
        refusals={"complex unmappable descriptor thing"},
        rerank_overrides={
            "history of MI": {
                "History of myocardial infarction": 10,
                "Myocardial infarction": 8,
            }
        },
        judgements={"heart failure worsening": "partially correct"},
    )


def make_full_context(llm=None, reservoir_path=None, **overrides) -> PipelineContext:
    ctx = build_context(
        KB_DIR,
        HashedNgramProvider(),
        llm if llm is not None else make_scenario_mock(),
        reservoir_path=reservoir_path,
    )
    return ctx.with_options(**overrides) if overrides else ctx
