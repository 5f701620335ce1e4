"""Evaluation: ranking accuracy, graded ranking quality, decomposition scores.

Ranking metrics consume traced mapping results; the trace's post-filter
candidate ranking for each component is compared against gold concept ids.
Decomposition quality is scored at two levels: attribute (which fields were
produced) and value (how close the produced strings are), both micro-averaged.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .decomposer import DecomposedQuery
from .errors import LengthMismatch, MalformedRow, MissingRanking
from .text import normalize_surface

GOLD_COLUMNS = ["label", "component", "gold_omop_ids"]

VALUE_MATCH_THRESHOLD = 0.8

# base and associated entities name things of the same kind, so their values
# compete in one pool when matching predictions to gold.
_VALUE_GROUPS = (
    ("entity", ("base_entity",), ("associated_entities",)),
    ("categories", (), ("categories",)),
    ("unit", ("unit",), ()),
    ("visit", ("visit",), ()),
    ("method", ("method",), ()),
    ("formula", ("formula",), ()),
)

_ATTRIBUTE_FIELDS = (
    "base_entity",
    "associated_entities",
    "categories",
    "unit",
    "visit",
    "method",
    "formula",
)


@dataclass(frozen=True)
class GoldRow:
    label: str
    component: str
    gold_ids: frozenset[int]


def load_gold_csv(path: str | Path) -> list[GoldRow]:
    """Read gold rows: ``label,component,gold_omop_ids`` with ids pipe-separated."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(str(path), 1, "missing header row") from None
        if header != GOLD_COLUMNS:
            raise MalformedRow(str(path), 1, f"expected header {GOLD_COLUMNS}, got {header}")
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(str(path), row_number, f"expected 3 fields, got {len(row)}")
            try:
                ids = frozenset(int(v) for v in row[2].split("|") if v.strip())
            except ValueError:
                raise MalformedRow(str(path), row_number, f"bad omop ids {row[2]!r}") from None
            if not ids:
                raise MalformedRow(str(path), row_number, "gold_omop_ids must not be empty")
            rows.append(GoldRow(label=row[0], component=row[1], gold_ids=ids))
    return rows


def _ranking_for(records: list[dict], row: GoldRow) -> list[int]:
    """The traced post-filter ranking for one gold row.

    Raises:
        MissingRanking: the matching result record carries no trace at all.
    """
    target = normalize_surface(row.label)
    for record in records:
        if normalize_surface(record.get("label", "")) != target:
            continue
        if "trace" not in record:
            raise MissingRanking(
                f"result for label {row.label!r} has no trace; re-run mapping with tracing enabled"
            )
        ranking: list[int] = []
        for item in record["trace"]:
            if item.get("stage") == "filter" and item.get("component") == row.component:
                ranking = [int(v) for v in item.get("ranking", [])]
        return ranking
    return []


def acc_at_k(records: list[dict], gold: list[GoldRow], k: int) -> float:
    """Fraction of gold rows fully answered within the top k candidates.

    A row counts as a hit only when every gold id appears in the top k of its
    component's ranking, so multi-concept golds require the joint set.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not gold:
        return 0.0
    hits = 0
    for row in gold:
        top = set(_ranking_for(records, row)[:k])
        if row.gold_ids <= top:
            hits += 1
    return hits / len(gold)


def ndcg_at_k(records: list[dict], gold: list[GoldRow], k: int) -> float:
    """Mean graded ranking quality over gold rows at cutoff k.

    Per row, each of the top k positions earns ``1/log2(position + 1)`` when
    it holds a gold id; the sum is normalized by the ideal arrangement of
    that row's gold ids, so a perfect ranking scores 1.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not gold:
        return 0.0
    total = 0.0
    for row in gold:
        ranking = _ranking_for(records, row)[:k]
        gain = sum(
            1.0 / math.log2(position + 1)
            for position, omop_id in enumerate(ranking, start=1)
            if omop_id in row.gold_ids
        )
        ideal = sum(1.0 / math.log2(position + 1) for position in range(1, min(len(row.gold_ids), k) + 1))
        total += gain / ideal if ideal > 0 else 0.0
    return total / len(gold)


def edit_similarity(a: str, b: str) -> float:
    """Normalized character-level similarity: 1 - distance / max length.

    Both strings are surface-normalized first; two empty strings are
    identical (similarity 1).
    """
    a = normalize_surface(a)
    b = normalize_surface(b)
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, start=1):
        current = [i]
        for j, char_b in enumerate(b, start=1):
            cost = 0 if char_a == char_b else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return 1.0 - previous[-1] / max(len(a), len(b))


def _present_fields(query: DecomposedQuery) -> set[str]:
    present = set()
    for name in _ATTRIBUTE_FIELDS:
        if getattr(query, name):
            present.add(name)
    return present


def _value_pairs(query: DecomposedQuery) -> list[tuple[str, str]]:
    pairs = []
    for group, scalar_fields, list_fields in _VALUE_GROUPS:
        for name in scalar_fields:
            value = getattr(query, name)
            if value:
                pairs.append((group, value))
        for name in list_fields:
            for value in getattr(query, name):
                pairs.append((group, value))
    return pairs


def _prf(tp: int, fp: int, fn: int) -> dict[str, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def decomposition_scores(
    predicted: list[DecomposedQuery], gold: list[DecomposedQuery]
) -> dict[str, dict[str, float]]:
    """Micro-averaged attribute and value precision/recall/F1.

    Attribute level compares which fields are present, by exact field name.
    Value level greedily matches predicted strings to unmatched gold strings
    within the same value group when their edit similarity reaches 0.8.

    Raises:
        LengthMismatch: the two lists do not align one-to-one.
    """
    if len(predicted) != len(gold):
        raise LengthMismatch(
            f"predicted has {len(predicted)} decompositions, gold has {len(gold)}"
        )
    attr_tp = attr_fp = attr_fn = 0
    value_tp = value_fp = value_fn = 0
    for pred_query, gold_query in zip(predicted, gold):
        pred_fields = _present_fields(pred_query)
        gold_fields = _present_fields(gold_query)
        attr_tp += len(pred_fields & gold_fields)
        attr_fp += len(pred_fields - gold_fields)
        attr_fn += len(gold_fields - pred_fields)

        gold_pairs = _value_pairs(gold_query)
        matched = [False] * len(gold_pairs)
        for group, value in _value_pairs(pred_query):
            hit = False
            for position, (gold_group, gold_value) in enumerate(gold_pairs):
                if matched[position] or gold_group != group:
                    continue
                if edit_similarity(value, gold_value) >= VALUE_MATCH_THRESHOLD:
                    matched[position] = True
                    hit = True
                    break
            if hit:
                value_tp += 1
            else:
                value_fp += 1
        value_fn += matched.count(False)
    return {
        "attribute": _prf(attr_tp, attr_fp, attr_fn),
        "value": _prf(value_tp, value_fp, value_fn),
    }


def evaluate(records: list[dict], gold: list[GoldRow], ks: list[int]) -> dict:
    """Compute ranking metrics at every cutoff; machine-readable report."""
    return {
        "rows": len(gold),
        "acc": {str(k): acc_at_k(records, gold, k) for k in ks},
        "ndcg": {str(k): ndcg_at_k(records, gold, k) for k in ks},
    }


def render_report(report: dict) -> str:
    """Plain-text table rendering of an evaluation report."""
    lines = [f"gold rows: {report['rows']}", ""]
    header = f"{'metric':<8}" + "".join(f"@{k:<8}" for k in report["acc"])
    lines.append(header)
    lines.append("-" * len(header))
    for metric in ("acc", "ndcg"):
        row = f"{metric:<8}"
        for k in report[metric]:
            row += f"{report[metric][k]:<9.4f}"
        lines.append(row)
    return "\n".join(lines)


def write_report(path: str | Path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
