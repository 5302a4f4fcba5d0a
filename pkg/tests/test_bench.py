"""Bench harness tests: counting exactness and report structure."""

import json

import numpy as np
import pytest

from viewroute.bench import BenchError, bench
from viewroute.encoder import ViewMatrix
from viewroute.index import IndexedView, build


def setup_index(rng, n_docs=50, views=4, dims=8):
    items = [
        IndexedView(f"d{i:03d}", v, rng.normal(size=dims))
        for i in range(n_docs)
        for v in range(views)
    ]
    return build(items)


def query(rng, m, dims=8):
    rows = rng.normal(size=(m, dims))
    return ViewMatrix("q", rows, np.ones(m, dtype=bool))


class TestBench:
    def test_scan_ratio_equals_valid_views(self):
        rng = np.random.default_rng(0)
        idx = setup_index(rng)
        queries = [query(rng, 6) for _ in range(3)]
        report = bench(idx, queries, reps=1, warmup=False)
        assert report.ratios["vectors_scanned_sum_max_over_routed"] == 6.0
        assert report.ratios["probes_sum_max_over_routed"] == 6.0

    def test_reference_row_embedded(self):
        rng = np.random.default_rng(1)
        report = bench(setup_index(rng), [query(rng, 3)], reps=1, warmup=False)
        ref = report.reference_large_scale
        assert ref["sum_max_seconds"] == 112.04
        assert ref["routed_seconds"] == 14.48
        assert ref["speedup"] == pytest.approx(7.74, abs=0.01)

    def test_json_round_trip(self):
        rng = np.random.default_rng(2)
        report = bench(setup_index(rng), [query(rng, 4)], reps=2)
        back = json.loads(report.to_json())
        assert set(back) == {"params", "paths", "ratios", "reference_large_scale"}
        assert back["params"]["reps"] == 2

    def test_route_fn_used(self):
        rng = np.random.default_rng(3)
        idx = setup_index(rng)
        q = query(rng, 5)
        seen = []
        report = bench(idx, [q], paths=("routed",), reps=1, warmup=False,
                       route_fn=lambda v: seen.append(2) or 2)
        assert seen == [2]
        assert report.paths["routed"]["total_vectors_scanned"] == idx.count

    def test_validation(self):
        rng = np.random.default_rng(4)
        idx = setup_index(rng)
        with pytest.raises(BenchError):
            bench(idx, [], reps=1)
        with pytest.raises(BenchError):
            bench(idx, [query(rng, 2)], reps=0)
        with pytest.raises(BenchError):
            bench(idx, [query(rng, 2)], paths=("warp",))

    def test_single_view_path(self):
        rng = np.random.default_rng(5)
        idx = setup_index(rng)
        report = bench(idx, [query(rng, 4)], paths=("single_view",), reps=1,
                       warmup=False)
        assert report.paths["single_view"]["total_vectors_scanned"] == idx.count
