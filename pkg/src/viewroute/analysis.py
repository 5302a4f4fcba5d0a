"""Token-redundancy analysis of view embeddings.

Builds pairwise cosine-similarity matrices over the views of a query (or
document) and counts distinct clusters under agglomerative merging with a
similarity threshold: clusters merge while the best linkage similarity is
at or above the threshold. Few clusters at a stringent threshold means
most views are redundant, which is what makes single-view routing viable.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field

import numpy as np

from .encoder import ViewMatrix

logger = logging.getLogger(__name__)

LINKAGES = ("average", "complete")


class AnalysisError(ValueError):
    pass


@dataclass
class SimilarityMatrix:
    """Cosine similarities between valid views; symmetric, unit diagonal.

    ``view_ids`` maps matrix positions back to view indices in the source
    matrix (zero-norm and padding rows are excluded).
    """

    owner_id: str
    values: np.ndarray
    view_ids: np.ndarray

    @property
    def views(self) -> int:
        return self.values.shape[0]


@dataclass
class ClusterReport:
    threshold: float
    linkage: str
    assignments: dict  # view_id -> cluster label
    n_clusters: int


@dataclass
class RedundancyStats:
    threshold: float
    linkage: str
    rows: list = field(default_factory=list)  # (owner_id, n_clusters, views)
    skipped_zero_rows: int = 0

    @property
    def mean_clusters(self) -> float:
        return statistics.fmean(r[1] for r in self.rows) if self.rows else 0.0

    @property
    def median_clusters(self) -> float:
        return statistics.median(r[1] for r in self.rows) if self.rows else 0.0

    def histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for _, n, _ in self.rows:
            hist[n] = hist.get(n, 0) + 1
        return dict(sorted(hist.items()))


def similarity_matrix(v: ViewMatrix) -> SimilarityMatrix:
    """Cosine similarity over the valid, nonzero-norm views."""
    idx = v.valid_indices()
    if idx.size == 0:
        raise AnalysisError(f"{v.owner_id!r} has no valid views")
    rows = v.rows[idx]
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > 0
    if not keep.all():
        logger.warning(
            "%s: excluding %d zero-norm view(s) from the similarity matrix",
            v.owner_id, int((~keep).sum()),
        )
    idx, rows, norms = idx[keep], rows[keep], norms[keep]
    if idx.size == 0:
        raise AnalysisError(f"{v.owner_id!r} has no nonzero views")
    unit = rows / norms[:, None]
    values = unit @ unit.T
    values = 0.5 * (values + values.T)  # exact symmetry
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(v.owner_id, values, idx)


def agglomerative_cluster(sim: SimilarityMatrix, threshold: float = 0.95,
                          linkage: str = "average") -> ClusterReport:
    """Merge the most similar cluster pair while linkage similarity >= threshold.

    Average linkage uses the mean pairwise similarity between clusters;
    complete linkage the minimum (most stringent).
    """
    if not -1.0 < threshold <= 1.0:
        raise AnalysisError(f"threshold must be in (-1, 1], got {threshold}")
    if linkage not in LINKAGES:
        raise AnalysisError(f"unknown linkage {linkage!r}; pick one of {LINKAGES}")
    n = sim.views
    clusters: list[list[int]] = [[i] for i in range(n)]
    vals = sim.values
    while len(clusters) > 1:
        best = None
        best_sim = -np.inf
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                block = vals[np.ix_(clusters[a], clusters[b])]
                s = float(block.mean()) if linkage == "average" else float(block.min())
                if s > best_sim:
                    best_sim = s
                    best = (a, b)
        if best is None or best_sim < threshold:
            break
        a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    assignments = {}
    for label, members in enumerate(clusters):
        for m in members:
            assignments[int(sim.view_ids[m])] = label
    return ClusterReport(threshold, linkage, assignments, len(clusters))


def redundancy_report(matrices, threshold: float = 0.95,
                      linkage: str = "average") -> RedundancyStats:
    """Cluster-count statistics over a collection of similarity matrices.

    Accepts SimilarityMatrix or ViewMatrix items.
    """
    stats = RedundancyStats(threshold=threshold, linkage=linkage)
    for m in matrices:
        sim = m if isinstance(m, SimilarityMatrix) else similarity_matrix(m)
        rep = agglomerative_cluster(sim, threshold, linkage)
        stats.rows.append((sim.owner_id, rep.n_clusters, sim.views))
    return stats


def write_report_csv(stats: RedundancyStats, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["owner_id", "n_clusters", "views"])
        for owner, n, views in stats.rows:
            w.writerow([owner, n, views])


def read_report_csv(path, threshold: float = 0.95,
                    linkage: str = "average") -> RedundancyStats:
    stats = RedundancyStats(threshold=threshold, linkage=linkage)
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            stats.rows.append((rec["owner_id"], int(rec["n_clusters"]), int(rec["views"])))
    return stats


def write_assignments_json(reports: dict[str, ClusterReport], path):
    payload = {
        owner: {str(k): v for k, v in rep.assignments.items()}
        for owner, rep in reports.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
