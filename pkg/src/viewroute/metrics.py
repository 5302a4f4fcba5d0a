"""Retrieval metrics and the TREC-standard file formats they consume.

Rankings are canonicalized with ties broken by doc_id ascending, so
metrics are deterministic across platforms. nDCG uses the exponential
gain (2^grade - 1) / log2(rank + 1) convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

Qrels = dict[str, dict[str, int]]


class MetricsError(ValueError):
    pass


@dataclass
class RunList:
    """Ranked results for one query; unique doc_ids, scores descending."""

    query_id: str
    ranked: list = field(default_factory=list)  # (doc_id, score) pairs

    def __post_init__(self):
        seen = set()
        for doc_id, _ in self.ranked:
            if doc_id in seen:
                raise MetricsError(
                    f"run for query {self.query_id!r} repeats doc {doc_id!r}"
                )
            seen.add(doc_id)
        self.ranked = sorted(self.ranked, key=lambda h: (-h[1], h[0]))

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.ranked]


def mrr_at_k(run: RunList, qrels: Qrels, k: int = 10) -> float | None:
    """Reciprocal rank of the first relevant doc in the top k; None when the
    query has no judgments (caller counts it as skipped)."""
    if k < 1:
        raise MetricsError(f"k must be >= 1, got {k}")
    judged = qrels.get(run.query_id)
    if not judged or not any(g > 0 for g in judged.values()):
        return None
    for rank, (doc_id, _) in enumerate(run.ranked[:k], start=1):
        if judged.get(doc_id, 0) > 0:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(run: RunList, qrels: Qrels, k: int = 10) -> float | None:
    """Normalized discounted cumulative gain with exponential gain."""
    if k < 1:
        raise MetricsError(f"k must be >= 1, got {k}")
    judged = qrels.get(run.query_id)
    if not judged or not any(g > 0 for g in judged.values()):
        return None
    dcg = 0.0
    for rank, (doc_id, _) in enumerate(run.ranked[:k], start=1):
        grade = judged.get(doc_id, 0)
        if grade > 0:
            dcg += (2.0**grade - 1.0) / math.log2(rank + 1)
    ideal = sorted(judged.values(), reverse=True)[:k]
    idcg = sum(
        (2.0**g - 1.0) / math.log2(r + 1) for r, g in enumerate(ideal, start=1) if g > 0
    )
    return dcg / idcg if idcg > 0 else 0.0


def recall_overlap_at_k(run: RunList, reference: RunList, k: int = 10) -> float:
    """Fraction of the reference top-k found in the candidate top-k; the
    index-quality recall used to compare approximate vs exact search."""
    ref = set(reference.doc_ids()[:k])
    if not ref:
        return 1.0
    got = set(run.doc_ids()[:k])
    return len(ref & got) / len(ref)


_METRIC_FNS = {"mrr": mrr_at_k, "ndcg": ndcg_at_k}


def parse_metric(name: str):
    """'mrr@10' -> (callable, 10)."""
    base, _, kstr = name.partition("@")
    base = base.strip().lower()
    if base not in _METRIC_FNS:
        raise MetricsError(f"unknown metric {name!r}")
    try:
        k = int(kstr) if kstr else 10
    except ValueError:
        raise MetricsError(f"bad metric cutoff in {name!r}")
    return _METRIC_FNS[base], k


def evaluate_runs(runs: list[RunList], qrels: Qrels, metrics=("mrr@10", "ndcg@10")):
    """Mean of each metric over evaluable queries.

    Returns ``(means, skipped)`` where skipped counts queries without
    positive judgments.
    """
    means: dict[str, float] = {}
    skipped = 0
    skipped_ids = set()
    for name in metrics:
        fn, k = parse_metric(name)
        values = []
        for run in runs:
            v = fn(run, qrels, k)
            if v is None:
                skipped_ids.add(run.query_id)
            else:
                values.append(v)
        means[name] = sum(values) / len(values) if values else 0.0
    skipped = len(skipped_ids)
    return means, skipped


# ---------------------------------------------------------------------------
# TREC formats

def read_qrels(path) -> Qrels:
    """TREC qrels: ``qid 0 docid grade``."""
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise MetricsError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
            qid, _, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise MetricsError(f"{path}:{ln}: bad grade {grade!r}")
            if g < 0:
                raise MetricsError(f"{path}:{ln}: negative grade {g}")
            qrels.setdefault(qid, {})[doc_id] = g
    return qrels


def write_qrels(path, qrels: Qrels):
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for doc_id, g in qrels[qid].items():
                fh.write(f"{qid} 0 {doc_id} {g}\n")


def read_run(path) -> list[RunList]:
    """TREC run format: ``qid Q0 docid rank score tag``."""
    per_query: dict[str, list] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise MetricsError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
            qid, _, doc_id, _, score, _ = parts
            if qid not in per_query:
                per_query[qid] = []
                order.append(qid)
            per_query[qid].append((doc_id, float(score)))
    return [RunList(qid, per_query[qid]) for qid in order]


def write_run(path, runs: list[RunList], tag: str = "viewroute"):
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for rank, (doc_id, score) in enumerate(run.ranked, start=1):
                fh.write(f"{run.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")
