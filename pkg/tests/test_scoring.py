"""Scorer tests against brute-force oracles and structural properties."""

import numpy as np
import pytest

from viewroute.encoder import ViewMatrix
from viewroute.router import RoutingOutput
from viewroute.scoring import (
    ScoringError,
    score_max_max,
    score_mean_view,
    score_routed,
    score_single_view,
    score_sum_max,
)


def vm(rows, mask=None, owner="x"):
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if mask is None:
        mask = np.ones(rows.shape[0], dtype=bool)
    return ViewMatrix(owner, rows, mask)


def routing_for(view: int, n: int) -> RoutingOutput:
    onehot = np.zeros(n)
    onehot[view] = 1.0
    return RoutingOutput(np.zeros((0, 0)), np.zeros(0), onehot.copy(),
                         onehot.copy(), onehot, view, 1.0)


def naive_sum_max(q, d):
    total = 0.0
    for i in range(q.views):
        if not q.valid_mask[i]:
            continue
        best = -np.inf
        for j in range(d.views):
            if not d.valid_mask[j]:
                continue
            best = max(best, float(np.dot(q.rows[i], d.rows[j])))
        total += best
    return total


def naive_max_max(q, d):
    best = -np.inf
    for i in range(q.views):
        if not q.valid_mask[i]:
            continue
        for j in range(d.views):
            if d.valid_mask[j]:
                best = max(best, float(np.dot(q.rows[i], d.rows[j])))
    return best


class TestSingleView:
    def test_identical_normalized_cls(self):
        v = np.array([0.6, 0.8])
        assert score_single_view(vm([v, [1, 0]]), vm([v])).value == pytest.approx(1.0)

    def test_orthogonal_cls(self):
        assert score_single_view(vm([[1.0, 0.0]]), vm([[0.0, 1.0]])).value == 0.0

    def test_random_matches_hand_dot(self):
        rng = np.random.default_rng(0)
        q, d = vm(rng.normal(size=(3, 4))), vm(rng.normal(size=(2, 4)))
        want = float(np.dot(q.rows[0], d.rows[0]))
        assert score_single_view(q, d).value == pytest.approx(want, abs=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(ScoringError, match="dims"):
            score_single_view(vm([[1.0, 0.0]]), vm([[1.0, 0.0, 0.0]]))


class TestSumMax:
    def test_matching_single_view(self):
        # one query view equal to one doc view, other doc views orthogonal
        q = vm([[1.0, 0.0, 0.0]])
        d = vm([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        assert score_sum_max(q, d).value == pytest.approx(1.0)

    def test_duplicated_query_views_scale_linearly(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=4)
        d = vm(rng.normal(size=(3, 4)))
        one = score_sum_max(vm([row]), d).value
        four = score_sum_max(vm([row] * 4), d).value
        assert four == pytest.approx(4 * one, rel=1e-12)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q = vm(rng.normal(size=(3, 2)))
            d = vm(rng.normal(size=(4, 2)))
            assert score_sum_max(q, d).value == pytest.approx(
                naive_sum_max(q, d), abs=1e-12)

    def test_padding_views_skipped(self):
        rng = np.random.default_rng(3)
        rows = rng.normal(size=(3, 4))
        q_full = vm(rows[:2])
        q_padded = vm(rows, mask=[True, True, False])
        d = vm(rng.normal(size=(3, 4)))
        assert score_sum_max(q_padded, d).value == pytest.approx(
            score_sum_max(q_full, d).value, abs=1e-15)

    def test_no_valid_views_rejected(self):
        with pytest.raises(ScoringError, match="valid"):
            score_sum_max(vm([[1.0, 0.0]], mask=[False]), vm([[1.0, 0.0]]))


class TestMaxMax:
    def test_single_views_plain_dot(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert score_max_max(vm([a]), vm([b])).value == pytest.approx(
            float(np.dot(a, b)), abs=1e-15)

    def test_dominated_by_sum_max_when_maxima_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = vm(rng.normal(size=(3, 4)))
            d_rows = rng.normal(size=(5, 4))
            d_rows /= np.linalg.norm(d_rows, axis=1, keepdims=True)
            # include every query direction so per-view maxima are >= 0
            d = vm(np.vstack([d_rows, q.rows / np.linalg.norm(q.rows, axis=1,
                                                              keepdims=True)]))
            assert score_max_max(q, d).value <= score_sum_max(q, d).value + 1e-12

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            q = vm(rng.normal(size=(2, 3)))
            d = vm(rng.normal(size=(4, 3)))
            assert score_max_max(q, d).value == pytest.approx(
                naive_max_max(q, d), abs=1e-12)


class TestRouted:
    def test_one_view_query_equals_sum_max(self):
        rng = np.random.default_rng(7)
        q = vm(rng.normal(size=(1, 4)))
        d = vm(rng.normal(size=(3, 4)))
        r = routing_for(0, 1)
        assert score_routed(q, d, r).value == pytest.approx(
            score_sum_max(q, d).value, abs=1e-15)

    def test_oracle_routing_equals_max_max(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            q = vm(rng.normal(size=(4, 3)))
            d = vm(rng.normal(size=(5, 3)))
            best = max(
                score_routed(q, d, routing_for(i, 4)).value for i in range(4)
            )
            assert best == pytest.approx(score_max_max(q, d).value, abs=1e-12)

    def test_routed_bounded_by_sum_max_when_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            rows = rng.normal(size=(3, 4))
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            q = vm(rows)
            d = vm(np.vstack([rows, rng.normal(size=(2, 4))]))
            for i in range(3):
                assert score_routed(q, d, routing_for(i, 3)).value \
                    <= score_sum_max(q, d).value + 1e-12

    def test_equals_sum_max_of_restricted_query(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            rows = rng.normal(size=(4, 3))
            q = vm(rows)
            d = vm(rng.normal(size=(5, 3)))
            sel = int(rng.integers(4))
            restricted = vm(rows[[sel]])
            assert score_routed(q, d, routing_for(sel, 4)).value == \
                score_sum_max(restricted, d).value

    def test_invalid_selected_view_rejected(self):
        q = vm(np.ones((2, 3)), mask=[True, False])
        d = vm(np.ones((1, 3)))
        with pytest.raises(ScoringError, match="selected"):
            score_routed(q, d, routing_for(1, 2))

    def test_score_carries_selected_view(self):
        q = vm(np.eye(3))
        d = vm(np.eye(3))
        s = score_routed(q, d, routing_for(2, 3))
        assert s.selected_view == 2 and s.scorer == "routed"


class TestMeanView:
    def test_equals_manual_mean(self):
        rng = np.random.default_rng(11)
        q = vm(rng.normal(size=(4, 3)))
        d = vm(rng.normal(size=(5, 3)))
        want = float((d.rows @ q.rows.mean(axis=0)).max())
        assert score_mean_view(q, d).value == pytest.approx(want, abs=1e-15)


class TestPermutationInvariance:
    def test_doc_view_permutation(self):
        rng = np.random.default_rng(12)
        q = vm(rng.normal(size=(3, 4)))
        d_rows = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        for fn in (score_sum_max, score_max_max, score_mean_view):
            assert fn(q, vm(d_rows)).value == pytest.approx(
                fn(q, vm(d_rows[perm])).value, abs=1e-12)
        r = routing_for(1, 3)
        assert score_routed(q, vm(d_rows), r).value == pytest.approx(
            score_routed(q, vm(d_rows[perm]), r).value, abs=1e-12)

    def test_query_view_permutation_sum_max(self):
        rng = np.random.default_rng(13)
        q_rows = rng.normal(size=(4, 3))
        d = vm(rng.normal(size=(5, 3)))
        perm = rng.permutation(4)
        assert score_sum_max(vm(q_rows), d).value == pytest.approx(
            score_sum_max(vm(q_rows[perm]), d).value, abs=1e-12)
