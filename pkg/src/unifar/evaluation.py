"""Retrieval metrics and the benchmark runner.

Rankings are candidate-id lists in rank order (rank 1 first). Graded
relevance uses gain 2^grade - 1 with a log2(rank+1) discount; binary metrics
treat grade > 0 as relevant. Queries with no relevant candidates raise
:class:`NoRelevant` and are excluded from macro averages (but counted).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .config import FACET_NAMES, canonical_facet
from .encoding import DOCUMENT, QUESTION, segment_input
from .errors import MissingCandidate, NoRelevant
from .retrieval import FacetIndex, ScoringStrategy

Qrels = dict[str, dict[str, int]]


# ------------------------------------------------------------ single query


def recall_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> float:
    """Fraction of relevant candidates retrieved in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise NoRelevant("recall undefined without relevant candidates")
    return len(set(ranking[:k]) & relevant) / len(relevant)


def r_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Precision at rank R where R = number of relevant candidates."""
    if not relevant:
        raise NoRelevant("r-precision undefined without relevant candidates")
    r = len(relevant)
    return len(set(ranking[:r]) & relevant) / r


def average_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Mean of precision@rank over relevant ranks; unretrieved relevant
    candidates contribute zero."""
    if not relevant:
        raise NoRelevant("average precision undefined without relevant candidates")
    hits = 0
    precision_sum = 0.0
    for rank, candidate in enumerate(ranking, start=1):
        if candidate in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(relevant)


def dcg(ranking: Sequence[str], grades: Mapping[str, int], cutoff: int) -> float:
    total = 0.0
    for rank, candidate in enumerate(ranking[:cutoff], start=1):
        grade = grades.get(candidate, 0)
        total += (2.0**grade - 1.0) / math.log2(rank + 1)
    return total


def ndcg(ranking: Sequence[str], grades: Mapping[str, int], cutoff: int) -> float:
    """DCG normalized by the ideal ordering's DCG at the same cutoff; an
    all-zero ideal scores 0."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    ideal_order = sorted(grades, key=lambda c: (-grades[c], c))
    ideal = dcg(ideal_order, grades, cutoff)
    if ideal == 0.0:
        return 0.0
    return dcg(ranking, grades, cutoff) / ideal


def pct20_cutoff(pool_size: int) -> int:
    """Cutoff for the 20%-of-pool metric (ceiling, so always >= 1)."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    return math.ceil(0.20 * pool_size)


def ndcg_pct20(ranking: Sequence[str], grades: Mapping[str, int], pool_size: int) -> float:
    return ndcg(ranking, grades, pct20_cutoff(pool_size))


def mrr(ranking: Sequence[str], relevant: set[str], cutoff: int) -> float:
    """Reciprocal rank of the first relevant candidate within the cutoff."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    if not relevant:
        raise NoRelevant("mrr undefined without relevant candidates")
    for rank, candidate in enumerate(ranking[:cutoff], start=1):
        if candidate in relevant:
            return 1.0 / rank
    return 0.0


# ------------------------------------------------------------- metric spec

_AT_K = re.compile(r"^(recall|ndcg|mrr)@(\d+)$")

DEFAULT_METRICS = ("recall@5", "r_precision", "map", "ndcg%20", "mrr@10")


def compute_metric(
    name: str,
    ranking: Sequence[str],
    relevant: set[str],
    grades: Mapping[str, int],
    pool_size: int,
) -> float:
    """Evaluate one named metric ("recall@5", "r_precision", "map",
    "ndcg@10", "ndcg%20", "mrr@10")."""
    key = name.strip().lower().replace("-", "_")
    if key in ("ndcg%20", "ndcg_pct20"):
        return ndcg_pct20(ranking, grades, pool_size)
    if key == "map":
        return average_precision(ranking, relevant)
    if key == "r_precision":
        return r_precision(ranking, relevant)
    match = _AT_K.match(key)
    if match:
        kind, k = match.group(1), int(match.group(2))
        if kind == "recall":
            return recall_at_k(ranking, relevant, k)
        if kind == "ndcg":
            return ndcg(ranking, grades, k)
        return mrr(ranking, relevant, k)
    raise ValueError(f"unknown metric {name!r}")


# ----------------------------------------------------------------- reports


@dataclass
class MetricReport:
    """Per-query metric values plus macro averages and run metadata."""

    per_query: dict[str, dict[str, float]]
    macro: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "macro": self.macro,
            "per_query": self.per_query,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def macro_average(per_query: Mapping[str, Mapping[str, float]], metrics: Sequence[str]) -> dict[str, float]:
    macro = {}
    for metric in metrics:
        values = [q[metric] for q in per_query.values() if metric in q]
        macro[metric] = sum(values) / len(values) if values else 0.0
    return macro


# --------------------------------------------------------------- benchmark


@dataclass
class BenchmarkQuery:
    """One benchmark query: free text or a document, optional facet and pool."""

    query_id: str
    text: str | None = None
    doc: Mapping | None = None
    facet: str | None = None
    pool: tuple[str, ...] | None = None

    def __post_init__(self):
        if (self.text is None) == (self.doc is None):
            raise ValueError(f"query {self.query_id!r} needs exactly one of text/doc")
        if self.facet is not None:
            self.facet = canonical_facet(self.facet)

    @classmethod
    def from_record(cls, record: Mapping) -> "BenchmarkQuery":
        return cls(
            query_id=str(record["id"]),
            text=record.get("text"),
            doc=record.get("doc"),
            facet=record.get("facet"),
            pool=tuple(record["pool"]) if record.get("pool") else None,
        )

    def to_sequence(self):
        if self.text is not None:
            return segment_input(self.text, kind=QUESTION, input_id=self.query_id)
        doc = self.doc
        sentences = doc.get("sentences")
        if sentences is None:
            return segment_input(
                doc["text"], kind=DOCUMENT, title=doc.get("title"), input_id=self.query_id
            )
        from .encoding import InputSequence

        return InputSequence(
            kind=DOCUMENT,
            sentences=tuple(sentences),
            title=doc.get("title"),
            input_id=self.query_id,
        )


def read_queries(path: str | Path) -> list[BenchmarkQuery]:
    queries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                queries.append(BenchmarkQuery.from_record(json.loads(line)))
    return queries


def read_qrels(path: str | Path) -> Qrels:
    """Whitespace-separated lines: query_id candidate_id grade."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(
                    f"qrels line {line_no} needs 'query_id candidate_id grade'"
                )
            query_id, candidate_id, grade = parts
            qrels.setdefault(query_id, {})[candidate_id] = int(grade)
    return qrels


def run_benchmark(
    model,
    index: FacetIndex,
    queries: Sequence[BenchmarkQuery],
    qrels: Qrels,
    strategy: ScoringStrategy,
    metrics: Sequence[str] = DEFAULT_METRICS,
) -> MetricReport:
    """Encode every query, rank its candidate pool, and compute metrics.

    A query's annotated facet overrides the strategy with facet scoring.
    Queries whose pool references ids missing from the index, or that have
    no relevant candidates, are skipped and listed in metadata.
    """
    per_query: dict[str, dict[str, float]] = {}
    excluded_no_relevant: list[str] = []
    missing_candidates: dict[str, list[str]] = {}
    facet_positions = {name: i for i, name in enumerate(index.facet_names)}

    for query in queries:
        grades = qrels.get(query.query_id, {})
        candidate_ids = list(query.pool) if query.pool is not None else list(index.ids)
        known = set(index.ids)
        missing = [c for c in candidate_ids if c not in known]
        if missing:
            missing_candidates[query.query_id] = missing
            continue
        relevant = {c for c in candidate_ids if grades.get(c, 0) > 0}
        if not relevant:
            excluded_no_relevant.append(query.query_id)
            continue
        query_strategy = strategy
        if query.facet is not None:
            query_strategy = ScoringStrategy.for_facet(facet_positions[query.facet])
        rep = next(model.represent_corpus([query.to_sequence()]))
        ranked = index.search(
            rep, query_strategy, k=len(candidate_ids), candidate_ids=candidate_ids
        )
        ranking = [cid for cid, _ in ranked]
        pool_grades = {c: grades.get(c, 0) for c in candidate_ids}
        per_query[query.query_id] = {
            metric: compute_metric(metric, ranking, relevant, pool_grades, len(candidate_ids))
            for metric in metrics
        }

    report = MetricReport(
        per_query=per_query,
        macro=macro_average(per_query, metrics),
        metadata={
            "strategy": strategy.label(index.facet_names),
            "metrics": list(metrics),
            "queries_evaluated": len(per_query),
            "queries_excluded_no_relevant": sorted(excluded_no_relevant),
            "queries_skipped_missing_candidates": {
                k: v for k, v in sorted(missing_candidates.items())
            },
            "pct20_cutoff_rule": "ceil(0.20 * pool_size)",
        },
    )
    return report
