"""Synthetic multi-intent retrieval corpus with planted ambiguity.

The generator plants ``n_intents`` orthonormal prototype directions. Every
document belongs to one intent and its views sit near that prototype. Each
query carries exactly one *anchor* token of its relevant intent; an
ambiguous query pads the remaining views with context tokens of a single
*distractor* intent, so its views span two intents while exactly one is
labeled relevant.

Construction guarantees (verifiable by brute force on the reference
embeddings):

* an oracle router that picks the anchor view retrieves only
  relevant-intent documents (MRR@10 = 1.0);
* the pooled mean view is dominated by the distractor views, so
  mean-view retrieval fails on ambiguous queries.

Documents and queries are emitted both as reference ViewMatrices (the
generator's own embedding geometry) and as token text, so the same task
exercises index/bench paths directly and encoder+router training end to
end. Anchor and context vocabularies are disjoint token sets, which is
the signal the router can learn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .dataio import Corpus
from .encoder import HashTokenizer, ViewMatrix
from .metrics import Qrels, write_qrels

ORACLE_VIEW = 1  # the anchor token is always the first view after the pooled row


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_docs: int = 10000
    views_per_doc: int = 8
    n_intents: int = 6
    dims: int = 64
    ambiguity_rate: float = 0.8
    seed: int = 7
    query_views: int | None = None  # defaults to views_per_doc
    n_train_queries: int = 2000
    n_dev_queries: int = 200
    context_tokens_per_intent: int = 24
    noise: float = 0.1  # relative perturbation of token vectors
    vocab_size: int = 1024  # hash space checked for token collisions

    def __post_init__(self):
        if self.query_views is None:
            self.query_views = self.views_per_doc
        if min(self.n_docs, self.n_intents, self.dims, self.views_per_doc) < 1:
            raise SynthConfigError("all size parameters must be positive")
        if self.n_intents > self.dims:
            raise SynthConfigError(
                f"n_intents ({self.n_intents}) cannot exceed dims ({self.dims}): "
                "prototypes are orthonormal"
            )
        if self.n_intents < 2:
            raise SynthConfigError("need at least 2 intents")
        if self.views_per_doc < 2:
            raise SynthConfigError("views_per_doc must be >= 2 (pooled row + tokens)")
        if self.query_views < 3 and self.ambiguity_rate > 0:
            raise SynthConfigError("ambiguous queries need query_views >= 3")
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            raise SynthConfigError("ambiguity_rate must be in [0, 1]")


@dataclass
class SynthData:
    config: SynthConfig
    corpus: Corpus
    train_queries: Corpus
    dev_queries: Corpus
    triplets: list  # (qid, pos_doc_id, neg_doc_id)
    qrels: Qrels  # dev queries only
    doc_intents: dict
    query_intents: dict
    doc_refs: list = field(default_factory=list)  # ViewMatrix per doc
    dev_query_refs: list = field(default_factory=list)
    train_query_refs: list = field(default_factory=list)
    anchors: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    token_vectors: dict = field(default_factory=dict)


def _fresh_tokens(cfg: SynthConfig):
    """Name anchor/context tokens so the hash tokenizer maps them injectively."""
    tok = HashTokenizer(cfg.vocab_size)
    used = set()

    def fresh(base: str) -> str:
        cand, n = base, 0
        while tok.token_id(cand) in used:
            n += 1
            cand = f"{base}x{n}"
        used.add(tok.token_id(cand))
        return cand

    anchors = [fresh(f"i{k}a") for k in range(cfg.n_intents)]
    contexts = [
        [fresh(f"i{k}c{c}") for c in range(cfg.context_tokens_per_intent)]
        for k in range(cfg.n_intents)
    ]
    return anchors, contexts


def _reference_matrix(owner: str, tokens: list[str], vectors: dict) -> ViewMatrix:
    """Rows: pooled mean first, then one row per token."""
    tok_rows = np.stack([vectors[t] for t in tokens])
    pooled = tok_rows.mean(axis=0)
    pooled = pooled / np.linalg.norm(pooled)
    rows = np.vstack([pooled, tok_rows])
    return ViewMatrix(owner, rows, np.ones(rows.shape[0], dtype=bool))


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51D]))
    anchors, contexts = _fresh_tokens(cfg)

    # orthonormal intent prototypes
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.dims, cfg.n_intents)))
    prototypes = basis.T

    sigma = cfg.noise / np.sqrt(cfg.dims)
    token_vectors: dict[str, np.ndarray] = {}
    for k in range(cfg.n_intents):
        for t in [anchors[k]] + contexts[k]:
            v = prototypes[k] + sigma * rng.normal(size=cfg.dims)
            token_vectors[t] = v / np.linalg.norm(v)

    corpus = Corpus()
    doc_intents: dict[str, int] = {}
    doc_refs: list[ViewMatrix] = []
    docs_by_intent: list[list[str]] = [[] for _ in range(cfg.n_intents)]
    n_tokens = cfg.views_per_doc - 1
    for i in range(cfg.n_docs):
        k = i % cfg.n_intents
        doc_id = f"d{i:06d}"
        toks = list(
            rng.choice(contexts[k], size=n_tokens,
                       replace=n_tokens > len(contexts[k]))
        )
        corpus.add(doc_id, " ".join(toks))
        doc_intents[doc_id] = k
        docs_by_intent[k].append(doc_id)
        doc_refs.append(_reference_matrix(doc_id, toks, token_vectors))

    def make_query(qid: str, idx: int):
        k = idx % cfg.n_intents
        ambiguous = rng.uniform() < cfg.ambiguity_rate
        n_ctx = cfg.query_views - 2
        if ambiguous:
            j = int(rng.integers(cfg.n_intents - 1))
            if j >= k:
                j += 1
            ctx_pool = contexts[j]
        else:
            j = k
            ctx_pool = contexts[k]
        toks = [anchors[k]] + list(
            rng.choice(ctx_pool, size=n_ctx, replace=n_ctx > len(ctx_pool))
        )
        return k, j, toks

    train_queries, dev_queries = Corpus(), Corpus()
    query_intents: dict[str, int] = {}
    triplets = []
    train_query_refs, dev_query_refs = [], []
    for i in range(cfg.n_train_queries):
        qid = f"q{i:05d}"
        k, j, toks = make_query(qid, i)
        train_queries.add(qid, " ".join(toks))
        query_intents[qid] = k
        train_query_refs.append(_reference_matrix(qid, toks, token_vectors))
        pos = docs_by_intent[k][int(rng.integers(len(docs_by_intent[k])))]
        neg_intent = j if j != k else (k + 1 + int(rng.integers(cfg.n_intents - 1))) % cfg.n_intents
        neg = docs_by_intent[neg_intent][int(rng.integers(len(docs_by_intent[neg_intent])))]
        triplets.append((qid, pos, neg))

    qrels: Qrels = {}
    for i in range(cfg.n_dev_queries):
        qid = f"dq{i:04d}"
        k, _, toks = make_query(qid, i)
        dev_queries.add(qid, " ".join(toks))
        query_intents[qid] = k
        dev_query_refs.append(_reference_matrix(qid, toks, token_vectors))
        qrels[qid] = {doc_id: 1 for doc_id in docs_by_intent[k]}

    return SynthData(
        config=cfg,
        corpus=corpus,
        train_queries=train_queries,
        dev_queries=dev_queries,
        triplets=triplets,
        qrels=qrels,
        doc_intents=doc_intents,
        query_intents=query_intents,
        doc_refs=doc_refs,
        dev_query_refs=dev_query_refs,
        train_query_refs=train_query_refs,
        anchors=anchors,
        contexts=contexts,
        token_vectors=token_vectors,
    )


def synth_corpus(n_docs: int, views_per_doc: int, n_intents: int, dims: int,
                 ambiguity_rate: float, seed: int, **overrides) -> SynthData:
    """Convenience wrapper mirroring the common positional parameter order."""
    cfg = SynthConfig(
        n_docs=n_docs, views_per_doc=views_per_doc, n_intents=n_intents,
        dims=dims, ambiguity_rate=ambiguity_rate, seed=seed, **overrides,
    )
    return generate(cfg)


def write_synth(data: SynthData, outdir):
    """Write the corpus, query splits, triplets, dev qrels, and metadata."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for doc_id, text in data.corpus.records:
            fh.write(json.dumps({"id": doc_id, "text": text}) + "\n")
    for name, queries in (("queries_train", data.train_queries),
                          ("queries_dev", data.dev_queries)):
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for qid, text in queries.records:
                fh.write(json.dumps({"id": qid, "text": text}) + "\n")
    with open(out / "triplets.tsv", "w", encoding="utf-8") as fh:
        for qid, pos, neg in data.triplets:
            fh.write(f"{qid}\t{pos}\t{neg}\n")
    write_qrels(out / "qrels_dev.txt", data.qrels)
    with open(out / "synth_meta.json", "w", encoding="utf-8") as fh:
        cfgd = dict(vars(data.config))
        json.dump({"config": cfgd, "intents": data.config.n_intents}, fh, indent=2)
        fh.write("\n")
