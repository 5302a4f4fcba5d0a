"""Query-document scorers over ViewMatrix pairs.

All scorers use the raw inner product; whether that equals cosine
similarity is decided by the encoder's row normalization. Padding views
are excluded by mask on both sides, never by zero-vector tricks.

Scorer menu:

=============  ==========================================================
single_view    dot of the two CLS rows (dual-encoder baseline)
sum_max        per query view, max inner product over doc views; summed
max_max        max over query views of the per-view max
routed         one selected query view against the doc views
mean_view      mean of the query views against the doc views (static
               pooled baseline; the training-time counterpart of routed)
=============  ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import ViewMatrix, cls_view
from .router import RoutingOutput

SCORERS = ("single_view", "sum_max", "max_max", "routed", "mean_view")


class ScoringError(ValueError):
    """Incompatible operands (dims mismatch, no valid views)."""


@dataclass
class Score:
    value: float
    scorer: str
    selected_view: int | None = None


def _check(q: ViewMatrix, d: ViewMatrix):
    if q.dims != d.dims:
        raise ScoringError(f"dims disagree: query {q.dims} vs doc {d.dims}")


def _valid(v: ViewMatrix, side: str) -> np.ndarray:
    rows = v.valid_rows()
    if rows.shape[0] == 0:
        raise ScoringError(f"{side} has no valid views")
    return rows


def score_single_view(q: ViewMatrix, d: ViewMatrix) -> Score:
    """CLS-to-CLS dot product."""
    _check(q, d)
    return Score(float(np.dot(cls_view(q), cls_view(d))), "single_view")


def score_sum_max(q: ViewMatrix, d: ViewMatrix) -> Score:
    """Late interaction: sum over query views of the max doc-view match."""
    _check(q, d)
    qr, dr = _valid(q, "query"), _valid(d, "doc")
    sim = qr @ dr.T
    return Score(float(sim.max(axis=1).sum()), "sum_max")


def score_max_max(q: ViewMatrix, d: ViewMatrix) -> Score:
    """Best single view-pair match."""
    _check(q, d)
    qr, dr = _valid(q, "query"), _valid(d, "doc")
    return Score(float((qr @ dr.T).max()), "max_max")


def score_routed(q: ViewMatrix, d: ViewMatrix, r: RoutingOutput) -> Score:
    """One selected query view against all doc views.

    Uses the hard selection. During training the selected vector is instead
    the straight-through combination over views (see trainer), which has
    the same forward value.
    """
    _check(q, d)
    if not (0 <= r.selected < q.views) or not q.valid_mask[r.selected]:
        raise ScoringError(f"selected view {r.selected} is not a valid query view")
    dr = _valid(d, "doc")
    sel = q.rows[r.selected]
    return Score(float((dr @ sel).max()), "routed", selected_view=r.selected)


def score_mean_view(q: ViewMatrix, d: ViewMatrix) -> Score:
    """Mean of the valid query views against all doc views (static baseline)."""
    _check(q, d)
    qr, dr = _valid(q, "query"), _valid(d, "doc")
    return Score(float((dr @ qr.mean(axis=0)).max()), "mean_view")
