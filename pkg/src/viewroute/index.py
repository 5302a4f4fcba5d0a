"""Multi-view vector index with exact (flat) and inverted-file search.

Every (doc_id, view_id) vector is indexed; searches score by inner
product and deduplicate to document level keeping the max-scoring view —
the index-side realization of the per-query-view max in late-interaction
scoring.

Vectors are quantized to float32 at build time (scores are computed in
float64 from those values), so a save/load round trip reproduces search
results exactly. ``vectors_scanned`` counts inner products against stored
vectors; centroid comparisons are tracked separately via ``probes_done``.

On-disk format: magic "FLIX", version u32, kind u8 (0 flat, 1 ivf), then
dims/count/K as u64, the centroid block (K x dims f32), and per-list
entries of (u32-length-prefixed doc_id UTF-8, view_id u32, dims x f32).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .encoder import ViewMatrix
from .router import RoutingOutput

INDEX_MAGIC = b"FLIX"
INDEX_VERSION = 1
KIND_FLAT = 0
KIND_IVF = 1

KMEANS_MAX_ITERS = 50
KMEANS_TOL = 1e-6


class IndexError_(ValueError):
    """Invalid index construction or query."""


class IndexFormatError(IOError):
    """Corrupt or mismatched index file."""


@dataclass
class IndexedView:
    doc_id: str
    view_id: int
    vector: np.ndarray


@dataclass
class SearchResult:
    """Ranked doc hits plus scan accounting.

    ``hits`` is a list of (doc_id, score, contributing_view_id), sorted by
    score descending with ties broken by doc_id ascending; doc_ids are
    unique (max-deduplicated).
    """

    hits: list
    probes_done: int
    vectors_scanned: int


class _Storage:
    """Contiguous vector store shared by both index kinds."""

    def __init__(self, vectors: np.ndarray, doc_ids: list[str],
                 doc_ords: np.ndarray, view_ids: np.ndarray):
        self.vectors32 = np.ascontiguousarray(vectors, dtype=np.float32)
        self.vectors = self.vectors32.astype(np.float64)
        self.doc_ids = doc_ids
        self.doc_id_arr = np.asarray(doc_ids, dtype=np.str_)
        self.doc_ords = doc_ords
        self.view_ids = view_ids

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)


def _make_storage(views: list[IndexedView]) -> _Storage:
    if not views:
        raise IndexError_("cannot build an index from an empty collection")
    dims = len(views[0].vector)
    seen = set()
    doc_ord: dict[str, int] = {}
    doc_ids: list[str] = []
    ords = np.empty(len(views), dtype=np.int64)
    vids = np.empty(len(views), dtype=np.uint32)
    mat = np.empty((len(views), dims), dtype=np.float32)
    for i, iv in enumerate(views):
        vec = np.asarray(iv.vector, dtype=np.float64)
        if vec.shape != (dims,):
            raise IndexError_(
                f"vector {i} has dims {vec.shape}, expected ({dims},)"
            )
        if not np.isfinite(vec).all():
            raise IndexError_(f"vector for ({iv.doc_id!r}, {iv.view_id}) is not finite")
        key = (iv.doc_id, iv.view_id)
        if key in seen:
            raise IndexError_(f"duplicate (doc_id, view_id) pair {key!r}")
        seen.add(key)
        if iv.doc_id not in doc_ord:
            doc_ord[iv.doc_id] = len(doc_ids)
            doc_ids.append(iv.doc_id)
        ords[i] = doc_ord[iv.doc_id]
        vids[i] = iv.view_id
        mat[i] = vec
    return _Storage(mat, doc_ids, ords, vids)


def _dedup_rank(store: _Storage, row_idx: np.ndarray, scores: np.ndarray,
                top_k: int) -> list:
    """Max-dedup scored rows by doc and return the ranked top_k hits."""
    best = np.full(store.n_docs, -np.inf)
    ords = store.doc_ords[row_idx]
    np.maximum.at(best, ords, scores)
    hit_mask = scores == best[ords]
    # first scanned row achieving each doc's max, for the contributing view
    hit_ords = ords[hit_mask]
    hit_rows = row_idx[hit_mask]
    uniq, first = np.unique(hit_ords, return_index=True)
    found_scores = best[uniq]
    order = np.lexsort((store.doc_id_arr[uniq], -found_scores))
    out = []
    for j in order[:top_k]:
        doc = store.doc_ids[uniq[j]]
        view = int(store.view_ids[hit_rows[first[j]]])
        out.append((doc, float(found_scores[j]), view))
    return out


class FlatIndex:
    """Exhaustive exact search over all indexed vectors."""

    kind = "flat"

    def __init__(self, store: _Storage):
        self.store = store

    @property
    def dims(self) -> int:
        return self.store.dims

    @property
    def count(self) -> int:
        return self.store.count

    def search(self, query_vector, top_k: int, nprobe: int | None = None) -> SearchResult:
        q = _check_query(self, query_vector, top_k)
        scores = self.store.vectors @ q
        rows = np.arange(self.store.count)
        hits = _dedup_rank(self.store, rows, scores, top_k)
        return SearchResult(hits, probes_done=1, vectors_scanned=self.store.count)

    def _scan_doc_maxima(self, q: np.ndarray, nprobe=None):
        scores = self.store.vectors @ q
        best = np.full(self.store.n_docs, -np.inf)
        np.maximum.at(best, self.store.doc_ords, scores)
        return best, 1, self.store.count, scores, np.arange(self.store.count)


class IVFIndex:
    """Inverted-file index: k-means centroids with per-centroid postings."""

    kind = "ivf"

    def __init__(self, store: _Storage, centroids: np.ndarray, lists: list[np.ndarray]):
        self.store = store
        self.centroids32 = np.ascontiguousarray(centroids, dtype=np.float32)
        self.centroids = self.centroids32.astype(np.float64)
        self.lists = lists

    @property
    def dims(self) -> int:
        return self.store.dims

    @property
    def count(self) -> int:
        return self.store.count

    @property
    def n_centroids(self) -> int:
        return self.centroids.shape[0]

    def _probe_order(self, q: np.ndarray) -> np.ndarray:
        d2 = np.sum(self.centroids * self.centroids, axis=1) - 2.0 * (self.centroids @ q)
        return np.argsort(d2, kind="stable")

    def search(self, query_vector, top_k: int, nprobe: int | None = None) -> SearchResult:
        q = _check_query(self, query_vector, top_k)
        nprobe = self._check_nprobe(nprobe)
        rows_parts = [self.lists[c] for c in self._probe_order(q)[:nprobe]]
        rows = np.concatenate(rows_parts) if rows_parts else np.empty(0, dtype=np.int64)
        scores = self.store.vectors[rows] @ q
        hits = _dedup_rank(self.store, rows, scores, top_k)
        return SearchResult(hits, probes_done=nprobe, vectors_scanned=len(rows))

    def _check_nprobe(self, nprobe) -> int:
        if nprobe is None:
            nprobe = self.n_centroids
        if not 1 <= nprobe <= self.n_centroids:
            raise IndexError_(
                f"nprobe must be in [1, {self.n_centroids}], got {nprobe}"
            )
        return nprobe

    def _scan_doc_maxima(self, q: np.ndarray, nprobe=None):
        nprobe = self._check_nprobe(nprobe)
        rows_parts = [self.lists[c] for c in self._probe_order(q)[:nprobe]]
        rows = np.concatenate(rows_parts) if rows_parts else np.empty(0, dtype=np.int64)
        scores = self.store.vectors[rows] @ q
        best = np.full(self.store.n_docs, -np.inf)
        np.maximum.at(best, self.store.doc_ords[rows], scores)
        return best, nprobe, len(rows), scores, rows


def _check_query(index, query_vector, top_k: int) -> np.ndarray:
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (index.dims,):
        raise IndexError_(f"query dims {q.shape} do not match index dims {index.dims}")
    if top_k < 1:
        raise IndexError_(f"top_k must be >= 1, got {top_k}")
    return q


# ---------------------------------------------------------------------------
# k-means

def _kmeans(data: np.ndarray, k: int, rng: np.random.Generator):
    """k-means++ seeding then Lloyd iterations (bounded, tolerance-stopped)."""
    n = data.shape[0]
    sq = np.sum(data * data, axis=1)
    centroids = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = sq - 2.0 * (data @ centroids[0]) + np.dot(centroids[0], centroids[0])
    d2 = np.maximum(d2, 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = data[int(rng.integers(n))]
        else:
            r = rng.uniform() * total
            centroids[j] = data[int(np.searchsorted(np.cumsum(d2), r).clip(0, n - 1))]
        nd2 = sq - 2.0 * (data @ centroids[j]) + np.dot(centroids[j], centroids[j])
        d2 = np.minimum(d2, np.maximum(nd2, 0.0))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITERS):
        dists = sq[:, None] - 2.0 * (data @ centroids.T) + np.sum(centroids * centroids, axis=1)
        assign = np.argmin(dists, axis=1)
        moved = 0.0
        for j in range(k):
            members = data[assign == j]
            if members.shape[0] == 0:
                # reseed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(np.min(dists, axis=1)))
                new = data[far]
                dists[far] = -1.0  # avoid reusing for another empty cluster
            else:
                new = members.mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new - centroids[j])))
            centroids[j] = new
        if moved < KMEANS_TOL:
            break
    dists = sq[:, None] - 2.0 * (data @ centroids.T) + np.sum(centroids * centroids, axis=1)
    assign = np.argmin(dists, axis=1)
    return centroids, assign


def build(views: list[IndexedView], kind: str = "flat", k: int = 0,
          seed: int = 0):
    """Build a flat or IVF index over (doc_id, view_id) vectors."""
    store = _make_storage(views)
    if kind == "flat":
        return FlatIndex(store)
    if kind != "ivf":
        raise IndexError_(f"unknown index kind {kind!r}")
    if k < 1:
        raise IndexError_(f"ivf requires k >= 1, got {k}")
    if k > store.count:
        raise IndexError_(f"k={k} exceeds the number of vectors ({store.count})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1FDE]))
    centroids, assign = _kmeans(store.vectors, k, rng)
    lists = [np.flatnonzero(assign == j) for j in range(k)]
    return IVFIndex(store, centroids, lists)


# ---------------------------------------------------------------------------
# multi-view search paths

def search_sum_max(index, q: ViewMatrix, top_k: int, nprobe: int | None = None) -> SearchResult:
    """Late-interaction retrieval: one scan per valid query view, summing
    each document's per-view maxima. The baseline cost path."""
    valid = q.valid_indices()
    if valid.size == 0:
        raise IndexError_("query has no valid views")
    n_docs = index.store.n_docs
    acc = np.zeros(n_docs)
    seen = np.zeros(n_docs, dtype=bool)
    gbest = np.full(n_docs, -np.inf)
    gview = np.zeros(n_docs, dtype=np.uint32)
    probes = 0
    scanned = 0
    for vi in valid:
        best, p, s, scores, rows = index._scan_doc_maxima(q.rows[vi], nprobe)
        probes += p
        scanned += s
        covered = best > -np.inf
        acc[covered] += best[covered]
        seen |= covered
        # track the single strongest term for the contributing view id
        improve = best > gbest
        if improve.any():
            ords = index.store.doc_ords[rows]
            hit = scores == best[ords]
            uniq, first = np.unique(ords[hit], return_index=True)
            upd = improve[uniq]
            gbest[uniq[upd]] = best[uniq[upd]]
            gview[uniq[upd]] = index.store.view_ids[rows[hit][first[upd]]]
    found = np.flatnonzero(seen)
    order = np.lexsort((index.store.doc_id_arr[found], -acc[found]))
    hits = [
        (index.store.doc_ids[found[j]], float(acc[found[j]]), int(gview[found[j]]))
        for j in order[:top_k]
    ]
    return SearchResult(hits, probes_done=probes, vectors_scanned=scanned)


def search_routed(index, q: ViewMatrix, routing: RoutingOutput, top_k: int,
                  nprobe: int | None = None) -> SearchResult:
    """Single-view retrieval with the routed query view."""
    if not (0 <= routing.selected < q.views) or not q.valid_mask[routing.selected]:
        raise IndexError_(f"routed view {routing.selected} is not a valid query view")
    return index.search(q.rows[routing.selected], top_k, nprobe)


# ---------------------------------------------------------------------------
# persistence

def save(index, path):
    store = index.store
    if isinstance(index, FlatIndex):
        kind, k, lists = KIND_FLAT, 0, [np.arange(store.count)]
        centroids = np.empty((0, store.dims), dtype=np.float32)
    elif isinstance(index, IVFIndex):
        kind, k, lists = KIND_IVF, index.n_centroids, index.lists
        centroids = index.centroids32
    else:
        raise IndexError_(f"cannot save index of type {type(index).__name__}")
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IB", INDEX_VERSION, kind))
        fh.write(struct.pack("<QQQ", store.dims, store.count, k))
        fh.write(centroids.tobytes())
        for rows in lists:
            fh.write(struct.pack("<Q", len(rows)))
            for r in rows:
                doc = store.doc_ids[store.doc_ords[r]].encode("utf-8")
                fh.write(struct.pack("<I", len(doc)))
                fh.write(doc)
                fh.write(struct.pack("<I", int(store.view_ids[r])))
                fh.write(store.vectors32[r].tobytes())


def load(path, expect_kind: str | None = None):
    """Load an index; ``expect_kind`` ('flat'/'ivf') rejects mismatches."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != INDEX_MAGIC:
            raise IndexFormatError(f"bad index magic {magic!r}, expected {INDEX_MAGIC!r}")
        version, kind = struct.unpack("<IB", _read(fh, 5))
        if version != INDEX_VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        if kind not in (KIND_FLAT, KIND_IVF):
            raise IndexFormatError(f"unknown index kind byte {kind}")
        kind_name = "flat" if kind == KIND_FLAT else "ivf"
        if expect_kind is not None and expect_kind != kind_name:
            raise IndexFormatError(
                f"index file is kind {kind_name!r}, expected {expect_kind!r}"
            )
        dims, count, k = struct.unpack("<QQQ", _read(fh, 24))
        n_cent = k if kind == KIND_IVF else 0
        centroids = np.frombuffer(
            _read(fh, 4 * n_cent * dims), dtype="<f4"
        ).reshape(n_cent, dims).copy()
        n_lists = k if kind == KIND_IVF else 1
        doc_ord: dict[str, int] = {}
        doc_ids: list[str] = []
        ords, vids, vecs, lists = [], [], [], []
        row = 0
        for _ in range(n_lists):
            (ln,) = struct.unpack("<Q", _read(fh, 8))
            lists.append(np.arange(row, row + ln))
            for _ in range(ln):
                (dlen,) = struct.unpack("<I", _read(fh, 4))
                doc = _read(fh, dlen).decode("utf-8")
                (vid,) = struct.unpack("<I", _read(fh, 4))
                vec = np.frombuffer(_read(fh, 4 * dims), dtype="<f4")
                if doc not in doc_ord:
                    doc_ord[doc] = len(doc_ids)
                    doc_ids.append(doc)
                ords.append(doc_ord[doc])
                vids.append(vid)
                vecs.append(vec)
                row += 1
        if row != count:
            raise IndexFormatError(f"index file lists {row} vectors, header says {count}")
    store = _Storage(
        np.asarray(vecs, dtype=np.float32).reshape(count, dims),
        doc_ids,
        np.asarray(ords, dtype=np.int64),
        np.asarray(vids, dtype=np.uint32),
    )
    if kind == KIND_FLAT:
        return FlatIndex(store)
    return IVFIndex(store, centroids, lists)


def _read(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise IndexFormatError(f"truncated index file: wanted {n} bytes, got {len(raw)}")
    return raw
