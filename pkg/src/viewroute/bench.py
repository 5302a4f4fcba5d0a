"""Latency and scan-count benchmarking of the retrieval paths.

Wall-clock numbers are reported alongside the hardware-independent
counters (``vectors_scanned``, probes); acceptance-style comparisons
should use the counters. A fixed large-scale reference row is embedded in
every report so desk-scale ratios can be read in context.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field

from .encoder import ViewMatrix
from .index import SearchResult, search_routed, search_sum_max
from .router import RoutingOutput

BENCH_PATHS = ("sum_max", "routed", "single_view")

# Reported latency for a 100k-doc, 768-dim workload with 30 query views and
# 200 doc views on a datacenter GPU: exhaustive late interaction vs routed
# single-view retrieval.
REFERENCE_LARGE_SCALE = {
    "corpus_docs": 100_000,
    "dims": 768,
    "query_views": 30,
    "doc_views": 200,
    "sum_max_seconds": 112.04,
    "routed_seconds": 14.48,
    "speedup": round(112.04 / 14.48, 2),
}


class BenchError(ValueError):
    pass


@dataclass
class BenchReport:
    params: dict
    paths: dict
    ratios: dict
    reference_large_scale: dict = field(default_factory=lambda: dict(REFERENCE_LARGE_SCALE))

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "paths": self.paths,
            "ratios": self.ratios,
            "reference_large_scale": self.reference_large_scale,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _default_route(q: ViewMatrix) -> int:
    return int(q.valid_indices()[0])


def _routing_for(q: ViewMatrix, selected: int) -> RoutingOutput:
    import numpy as np

    onehot = np.zeros(q.views)
    onehot[selected] = 1.0
    return RoutingOutput(
        attn=np.zeros((0, 0)), logits=np.zeros(0), alpha=onehot.copy(),
        alpha_hat=onehot.copy(), onehot=onehot, selected=selected, tau=0.0,
    )


def bench(index, queries: list[ViewMatrix], paths=("sum_max", "routed"),
          top_k: int = 10, nprobe: int | None = None, reps: int = 3,
          route_fn=None, warmup: bool = True) -> BenchReport:
    """Time each retrieval path over the query set.

    ``route_fn(query) -> view index`` supplies the routed path's selection
    (default: first valid view; the cost is selection-independent). The
    first rep is a warmup and is excluded from timing.
    """
    if not queries:
        raise BenchError("bench needs at least one query")
    if reps < 1:
        raise BenchError(f"reps must be >= 1, got {reps}")
    for p in paths:
        if p not in BENCH_PATHS:
            raise BenchError(f"unknown bench path {p!r}; pick from {BENCH_PATHS}")
    route_fn = route_fn or _default_route
    selections = [route_fn(q) for q in queries]

    def run_query(path: str, q: ViewMatrix, sel: int) -> SearchResult:
        if path == "sum_max":
            return search_sum_max(index, q, top_k, nprobe)
        if path == "routed":
            return search_routed(index, q, _routing_for(q, sel), top_k, nprobe)
        return index.search(q.rows[0], top_k, nprobe)  # single_view: CLS row

    path_stats = {}
    for path in paths:
        times = []
        scanned = 0
        probes = 0
        total_reps = reps + (1 if warmup else 0)
        for rep in range(total_reps):
            count_this_rep = rep == total_reps - 1
            for q, sel in zip(queries, selections):
                t0 = time.perf_counter()
                res = run_query(path, q, sel)
                dt = time.perf_counter() - t0
                if not warmup or rep > 0:
                    times.append(dt)
                if count_this_rep:
                    scanned += res.vectors_scanned
                    probes += res.probes_done
        path_stats[path] = {
            "median_s_per_query": statistics.median(times),
            "total_s": sum(times),
            "total_vectors_scanned": scanned,
            "probes": probes,
        }

    ratios = {}
    if "sum_max" in path_stats and "routed" in path_stats:
        sm, rt = path_stats["sum_max"], path_stats["routed"]
        ratios["vectors_scanned_sum_max_over_routed"] = (
            sm["total_vectors_scanned"] / rt["total_vectors_scanned"]
            if rt["total_vectors_scanned"] else float("inf")
        )
        ratios["probes_sum_max_over_routed"] = (
            sm["probes"] / rt["probes"] if rt["probes"] else float("inf")
        )
        ratios["wallclock_sum_max_over_routed"] = (
            sm["median_s_per_query"] / rt["median_s_per_query"]
            if rt["median_s_per_query"] else float("inf")
        )

    params = {
        "top_k": top_k,
        "nprobe": nprobe,
        "reps": reps,
        "n_queries": len(queries),
        "index_kind": index.kind,
        "index_vectors": index.count,
        "query_valid_views": [int(q.valid_mask.sum()) for q in queries[:8]],
    }
    return BenchReport(params=params, paths=path_stats, ratios=ratios)
