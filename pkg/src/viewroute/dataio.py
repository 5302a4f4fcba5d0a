"""Corpus, query, and triplet ingestion.

Corpora and query files are JSONL records with ``id`` and ``text`` fields;
TSV (``id<TAB>text``) is also accepted. Triplets are TSV, either raw text
(``query<TAB>pos<TAB>neg``) or ids (``qid<TAB>pos_id<TAB>neg_id``)
resolved against a corpus and a query file. Parsing is streaming and every
error names the offending line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class DataError(ValueError):
    pass


@dataclass
class Corpus:
    """Ordered (doc_id, text) records with a dense id -> ordinal map."""

    records: list = field(default_factory=list)
    id_to_ord: dict = field(default_factory=dict)

    def add(self, doc_id: str, text: str, where: str = ""):
        if doc_id in self.id_to_ord:
            raise DataError(f"duplicate id {doc_id!r}{where}")
        self.id_to_ord[doc_id] = len(self.records)
        self.records.append((doc_id, text))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.id_to_ord

    def text(self, doc_id: str) -> str:
        return self.records[self.id_to_ord[doc_id]][1]

    def ids(self) -> list[str]:
        return [i for i, _ in self.records]


@dataclass
class Triplet:
    query_text: str
    positive_text: str
    negative_text: str
    query_id: str = ""

    def __post_init__(self):
        if self.positive_text == self.negative_text:
            raise DataError(
                f"triplet for query {self.query_id or self.query_text!r} has "
                "identical positive and negative"
            )


def _parse_record(line: str, path, ln: int):
    if line.startswith("{"):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{ln}: malformed JSON ({e.msg})")
        if "id" not in rec or "text" not in rec:
            raise DataError(f"{path}:{ln}: record needs 'id' and 'text' fields")
        return str(rec["id"]), str(rec["text"])
    if "\t" in line:
        doc_id, _, text = line.partition("\t")
        return doc_id, text
    raise DataError(f"{path}:{ln}: line is neither JSON nor id<TAB>text")


def load_corpus(path) -> Corpus:
    """Stream a JSONL or TSV corpus; duplicate or malformed lines fail with
    the line number."""
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            doc_id, text = _parse_record(line, path, ln)
            corpus.add(doc_id, text, where=f" at {path}:{ln}")
    return corpus


def load_queries(path) -> Corpus:
    """Same shape as a corpus: (query_id, text) records."""
    return load_corpus(path)


def load_triplets(path, corpus: Corpus | None = None,
                  queries: Corpus | None = None, mode: str = "auto") -> list[Triplet]:
    """Load training triplets.

    ``mode`` is ``text``, ``ids``, or ``auto`` (ids when the second field of
    the first data line resolves in the corpus). Id mode requires both a
    corpus and a query file.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{ln}: expected 3 tab-separated fields")
            rows.append((ln, parts))
    if not rows:
        return []
    if mode == "auto":
        mode = "ids" if corpus is not None and rows[0][1][1] in corpus else "text"
    if mode == "text":
        return [Triplet(q, p, n) for _, (q, p, n) in rows]
    if mode != "ids":
        raise DataError(f"unknown triplet mode {mode!r}")
    if corpus is None or queries is None:
        raise DataError("id-based triplets need both a corpus and a query file")
    out = []
    for ln, (qid, pos_id, neg_id) in rows:
        if qid not in queries:
            raise DataError(f"{path}:{ln}: unknown query id {qid!r}")
        if pos_id not in corpus:
            raise DataError(f"{path}:{ln}: unknown doc id {pos_id!r}")
        if neg_id not in corpus:
            raise DataError(f"{path}:{ln}: unknown doc id {neg_id!r}")
        out.append(Triplet(queries.text(qid), corpus.text(pos_id),
                           corpus.text(neg_id), query_id=qid))
    return out
