"""End-to-end mapping: dictionary entries in, linked concepts out.

For every decomposed component the pipeline checks the reservoir, retrieves
candidates in both search spaces, applies linking rules and the similarity
filter, short-circuits on an exact surface match among the survivors, and
otherwise lets self-consistency reranking decide.  Non-NA results pass the
automatic judge and enter the review queue.

One failing component never aborts a batch: provider transport failures in
the stages that produce a result convert that component to NA with the error
recorded in the trace.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .decomposer import (
    DataDictionaryEntry,
    DecomposedQuery,
    DEFAULT_EXAMPLE_COUNT,
    ExampleBank,
    decompose,
    validate_input,
)
from .embeddings import EmbeddingProvider, HashedNgramProvider, load_dense_file
from .errors import DecompositionFailure, InvalidEntry, ProviderFailure
from .filtering import DEFAULT_TAU, LinkingRules, apply_linking_rules, default_rules, filter_by_similarity, load_rules
from .llm import LLMProvider, MockLLMProvider, ScriptedLLMProvider, WireLLMProvider
from .reranker import NA_LITERAL, RerankConfig, select_top, self_consistency
from .reservoir import ConceptRef, Judgement, Reservoir, judge
from .retrieval import Candidate, RetrievalIndex, build_index, merge_retrieve
from .vocab import ConceptStore, expand_synonyms, load_vocabulary
from .embeddings import WireEmbeddingProvider

logger = logging.getLogger(__name__)

DEFAULT_K = 10

STATUS_EXACT = "exact_match"
STATUS_RERANKED = "reranked"
STATUS_RESERVOIR = "reservoir_hit"

# Component kinds whose queries carry an implied domain regardless of the
# decomposition's own hint.
KIND_DOMAINS = {"unit": "Unit"}


class _Tracer:
    """Deterministic trace collector: a sequence number instead of wall time."""

    def __init__(self):
        self.records: list[dict] = []
        self._seq = 0

    def add(self, stage: str, **fields) -> None:
        self._seq += 1
        self.records.append({"seq": self._seq, "stage": stage, **fields})


@dataclass
class ComponentOutcome:
    """What happened to one decomposed component."""

    status: str
    omop_id: int | None = None
    code: str | None = None
    vocabulary: str | None = None
    confidence: float | None = None

    def to_record(self) -> dict:
        record: dict = {"status": self.status}
        if self.omop_id is not None:
            record["omop_id"] = self.omop_id
        if self.code is not None:
            record["code"] = self.code
        if self.vocabulary is not None:
            record["vocabulary"] = self.vocabulary
        if self.confidence is not None:
            record["confidence"] = self.confidence
        return record


@dataclass
class MappingResult:
    """Mapping outcome for one dictionary entry."""

    entry: DataDictionaryEntry
    decomposition: DecomposedQuery | None
    component_results: dict[str, ComponentOutcome]
    trace: list[dict] | None = None

    def to_record(self, include_trace: bool = False) -> dict:
        record = {
            "name": self.entry.name,
            "label": self.entry.label,
            "decomposition": self.decomposition.to_record() if self.decomposition else None,
            "component_results": {
                key: outcome.to_record() for key, outcome in self.component_results.items()
            },
        }
        if include_trace and self.trace is not None:
            record["trace"] = self.trace
        return record


@dataclass
class PipelineContext:
    """Everything a mapping run needs, bundled for reuse across requests."""

    store: ConceptStore
    index: RetrievalIndex
    embedding_provider: EmbeddingProvider
    llm: LLMProvider
    rules: LinkingRules
    reservoir: Reservoir | None = None
    example_bank: ExampleBank | None = None
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    rerank: RerankConfig = field(default_factory=RerankConfig)
    m_examples: int = DEFAULT_EXAMPLE_COUNT
    kind_domains: dict[str, str] = field(default_factory=lambda: dict(KIND_DOMAINS))

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be within [0, 1]")

    def with_options(self, **overrides) -> "PipelineContext":
        """A shallow copy with selected knobs replaced; heavy state is shared."""
        return replace(self, **overrides)


def _na() -> ComponentOutcome:
    return ComponentOutcome(status=NA_LITERAL)


def _component_domain(kind: str, domain_hint: str, ctx: PipelineContext) -> str | None:
    if kind in ctx.kind_domains:
        return ctx.kind_domains[kind]
    if kind == "base" and domain_hint:
        return domain_hint
    return None


def map_component(
    text: str,
    kind: str,
    ctx: PipelineContext,
    domain_hint: str = "",
    tracer: _Tracer | None = None,
    component_key: str | None = None,
) -> ComponentOutcome:
    """Map a single component query to a concept (or NA).

    Stage order: reservoir lookup, hybrid retrieval, linking rules,
    similarity filter, exact-match short-circuit, self-consistency rerank,
    then the judge gate in front of the reservoir queue.  A judge failure
    never changes an already computed outcome; it only skips the enqueue.
    ``component_key`` names the component in trace records; it defaults to
    the query text.
    """
    key = component_key if component_key is not None else text
    if ctx.reservoir is not None:
        hit = ctx.reservoir.lookup(text)
        if hit is not None:
            if tracer:
                tracer.add("reservoir", component=key, hit=True, review_id=hit.review_id)
            first = hit.concepts[0]
            vocabulary = None
            if first.omop_id in ctx.store:
                vocabulary = ctx.store.get_concept(first.omop_id).vocabulary
            return ComponentOutcome(
                status=STATUS_RESERVOIR,
                omop_id=first.omop_id,
                code=first.code,
                vocabulary=vocabulary,
            )
        if tracer:
            tracer.add("reservoir", component=key, hit=False)

    try:
        candidates = merge_retrieve(ctx.index, text, ctx.k)
    except ProviderFailure as exc:
        logger.warning("retrieval failed for %r: %s", text, exc)
        if tracer:
            tracer.add("retrieve", component=key, error=str(exc))
        return _na()
    if tracer:
        tracer.add("retrieve", component=key, ranking=[c.omop_id for c in candidates])

    domain = _component_domain(kind, domain_hint, ctx)
    routed = apply_linking_rules(candidates, domain, ctx.rules, query_text=text)
    if tracer:
        tracer.add(
            "rules",
            component=key,
            domain=domain,
            kept=len(routed),
            dropped=len(candidates) - len(routed),
        )

    try:
        survivors = filter_by_similarity(routed, text, ctx.embedding_provider, ctx.tau)
    except ProviderFailure as exc:
        logger.warning("similarity filter failed for %r: %s", text, exc)
        if tracer:
            tracer.add("filter", component=key, error=str(exc))
        return _na()
    if tracer:
        tracer.add("filter", component=key, ranking=[c.omop_id for c in survivors])
    if not survivors:
        return _na()

    exact_ids = {concept.omop_id for concept in ctx.store.find_exact(text)}
    selected: Candidate | None = None
    confidence: float | None = None
    for candidate in survivors:
        if candidate.omop_id in exact_ids:
            selected = candidate
            break
    if selected is not None:
        status = STATUS_EXACT
        if tracer:
            tracer.add("exact", component=key, omop_id=selected.omop_id)
    else:
        scored = self_consistency(text, survivors, ctx.llm, ctx.rerank, base_seed=0)
        decision = select_top(scored, ctx.rerank)
        if tracer:
            tracer.add(
                "rerank",
                component=key,
                candidates=[
                    {"omop_id": s.candidate.omop_id, "scores": s.scores, "confidence": s.confidence}
                    for s in scored
                ],
                selected=None if decision.is_na else decision.selected.candidate.omop_id,
            )
        if decision.is_na:
            return _na()
        status = STATUS_RERANKED
        selected = decision.selected.candidate
        confidence = decision.selected.confidence

    outcome = ComponentOutcome(
        status=status,
        omop_id=selected.omop_id,
        code=selected.code,
        vocabulary=selected.vocabulary,
        confidence=confidence,
    )
    if ctx.reservoir is not None:
        refs = [ConceptRef(code=selected.code, omop_id=selected.omop_id, role="base")]
        try:
            judgement = judge(text, selected, ctx.llm)
        except ProviderFailure as exc:
            logger.warning("judge failed for %r: %s", text, exc)
            if tracer:
                tracer.add("store", component=key, error=str(exc), enqueued=False)
            return outcome
        review_id = ctx.reservoir.enqueue(text, refs, judgement)
        if tracer:
            tracer.add(
                "store",
                component=key,
                judgement=judgement.value,
                enqueued=review_id is not None,
                review_id=review_id,
            )
    return outcome


def _absorb(tracer: _Tracer | None, records: list[dict] | None) -> None:
    """Re-emit collected sub-stage records through the tracer's numbering."""
    if tracer is None or not records:
        return
    for record in records:
        fields = dict(record)
        tracer.add(fields.pop("stage"), **fields)


def _entry_failure(
    entry: DataDictionaryEntry, tracer: _Tracer | None, error: str
) -> MappingResult:
    if tracer:
        tracer.add("entry", error=error)
    return MappingResult(
        entry=entry,
        decomposition=None,
        component_results={"entry": _na()},
        trace=tracer.records if tracer else None,
    )


def map_entry(
    entry: DataDictionaryEntry, ctx: PipelineContext, trace_enabled: bool = False
) -> MappingResult:
    """Validate, decompose and map one dictionary entry.

    A validation or decomposition failure yields a single NA outcome under
    the ``entry`` key rather than raising: batch mapping treats failures as
    data, not exceptions.
    """
    tracer = _Tracer() if trace_enabled else None
    try:
        validated = validate_input(entry)
    except InvalidEntry as exc:
        return _entry_failure(entry, tracer, str(exc))
    decompose_trace: list[dict] | None = [] if tracer else None
    try:
        decomposition = decompose(
            validated,
            ctx.llm,
            bank=ctx.example_bank,
            m=ctx.m_examples,
            rules_text=ctx.rules.to_prompt_text(),
            trace=decompose_trace,
        )
    except (DecompositionFailure, ProviderFailure) as exc:
        _absorb(tracer, decompose_trace)
        logger.warning("decomposition failed for %r: %s", validated.label, exc)
        return _entry_failure(validated, tracer, str(exc))
    _absorb(tracer, decompose_trace)

    components: list[tuple[str, str, str]] = [("base_entity", decomposition.base_entity, "base")]
    for text in decomposition.associated_entities:
        components.append((f"associated_entity:{text}", text, "associated"))
    for text in decomposition.categories:
        components.append((f"category:{text}", text, "category"))
    if decomposition.unit:
        components.append(("unit", decomposition.unit, "unit"))
    if decomposition.visit:
        components.append(("visit", decomposition.visit, "visit"))
    if decomposition.method:
        components.append(("method", decomposition.method, "method"))
    if decomposition.formula:
        components.append(("formula", decomposition.formula, "formula"))

    component_results: dict[str, ComponentOutcome] = {}
    for key, text, kind in components:
        component_results[key] = map_component(
            text,
            kind,
            ctx,
            domain_hint=decomposition.domain_hint,
            tracer=tracer,
            component_key=key,
        )
    return MappingResult(
        entry=validated,
        decomposition=decomposition,
        component_results=component_results,
        trace=tracer.records if tracer else None,
    )


def map_dictionary(
    entries: Iterable[DataDictionaryEntry],
    ctx: PipelineContext,
    parallelism: int = 1,
    progress: Callable[[int, int], None] | None = None,
    trace_enabled: bool = False,
) -> list[MappingResult]:
    """Map a whole dictionary, preserving input order in the results.

    ``parallelism`` bounds concurrent entries; results are byte-identical
    across parallelism settings because entries are independent and the
    reservoir serves only human-approved state during a run.  ``progress`` is
    called after each completed entry with (completed, total).
    """
    entries = list(entries)
    total = len(entries)
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    results: list[MappingResult | None] = [None] * total
    if parallelism == 1:
        for position, entry in enumerate(entries):
            results[position] = map_entry(entry, ctx, trace_enabled=trace_enabled)
            if progress:
                progress(position + 1, total)
        return [result for result in results if result is not None]
    completed = 0
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {
            pool.submit(map_entry, entry, ctx, trace_enabled): position
            for position, entry in enumerate(entries)
        }
        for future in as_completed(futures):
            position = futures[future]
            results[position] = future.result()
            completed += 1
            if progress:
                progress(completed, total)
    return [result for result in results if result is not None]


def serialize_results(results: list[MappingResult], include_trace: bool = False) -> str:
    """JSON Lines rendering with a stable field order per record."""
    lines = [
        json.dumps(result.to_record(include_trace=include_trace), ensure_ascii=False)
        for result in results
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def write_results(path: str | Path, results: list[MappingResult], include_trace: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_results(results, include_trace=include_trace))


def load_results(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# ---------------------------------------------------------------------------
# Context assembly from a knowledge-base directory.

def make_providers(
    spec: str,
    embed_url: str | None = None,
    llm_url: str | None = None,
) -> tuple[EmbeddingProvider, LLMProvider]:
    """Build providers from a CLI-style spec: mock, wire, or scripted:<path>.

    The mock pair is fully deterministic and local.  Wire providers need
    service URLs.  ``scripted:<path>`` replays recorded completions but keeps
    the deterministic local embeddings.
    """
    if spec == "mock":
        return HashedNgramProvider(), MockLLMProvider()
    if spec == "wire":
        if not embed_url or not llm_url:
            raise ValueError("wire provider needs --embed-url and --llm-url")
        return WireEmbeddingProvider(embed_url), WireLLMProvider(llm_url)
    if spec.startswith("scripted:"):
        return HashedNgramProvider(), ScriptedLLMProvider.from_file(spec.split(":", 1)[1])
    raise ValueError(f"unknown provider spec {spec!r}")


def build_context(
    kb_dir: str | Path,
    embedding_provider: EmbeddingProvider,
    llm: LLMProvider,
    rules_path: str | Path | None = None,
    reservoir_path: str | Path | None = None,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    rerank: RerankConfig | None = None,
    m_examples: int = DEFAULT_EXAMPLE_COUNT,
) -> PipelineContext:
    """Load a knowledge-base directory into a ready-to-serve context.

    Expected layout: ``concepts.csv``, ``synonyms.csv``, ``relationships.csv``,
    optional ``examples.json`` (in-context example bank), optional
    ``embeddings.tsv`` (precomputed dense vectors), optional ``rules.json``
    used when no explicit rules path is given.
    """
    kb_dir = Path(kb_dir)
    store = expand_synonyms(
        load_vocabulary(
            kb_dir / "concepts.csv", kb_dir / "synonyms.csv", kb_dir / "relationships.csv"
        )
    )
    precomputed = None
    embeddings_file = kb_dir / "embeddings.tsv"
    if embeddings_file.exists():
        _, precomputed = load_dense_file(embeddings_file)
    index = build_index(store, embedding_provider, precomputed=precomputed)
    if rules_path is not None:
        rules = load_rules(rules_path)
        rules.validate_against(store)
    elif (kb_dir / "rules.json").exists():
        rules = load_rules(kb_dir / "rules.json")
        rules.validate_against(store)
    else:
        # Built-in defaults route to vocabularies a small store may not
        # carry; routes to absent vocabularies simply never match.
        rules = default_rules()
    bank = None
    examples_file = kb_dir / "examples.json"
    if examples_file.exists():
        bank = ExampleBank.from_file(examples_file, embedding_provider)
    reservoir = Reservoir(reservoir_path, store=store) if reservoir_path is not None else Reservoir(None, store=store)
    return PipelineContext(
        store=store,
        index=index,
        embedding_provider=embedding_provider,
        llm=llm,
        rules=rules,
        reservoir=reservoir,
        example_bank=bank,
        k=k,
        tau=tau,
        rerank=rerank or RerankConfig(),
        m_examples=m_examples,
    )
