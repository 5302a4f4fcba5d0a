"""Corpus / queries / triplets ingestion tests."""

import pytest

from viewroute.dataio import DataError, Triplet, load_corpus, load_triplets


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        assert len(load_corpus(p)) == 0

    def test_three_records_in_order(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(
            '{"id": "a", "text": "one"}\n'
            '{"id": "b", "text": "two"}\n'
            '{"id": "c", "text": "three"}\n'
        )
        c = load_corpus(p)
        assert c.ids() == ["a", "b", "c"]
        assert c.text("b") == "two"

    def test_tsv_accepted(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("a\thello world\nb\tmore text\n")
        c = load_corpus(p)
        assert c.text("a") == "hello world"

    def test_duplicate_id_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        lines = [f'{{"id": "d{i}", "text": "t"}}' for i in range(6)]
        lines.append('{"id": "d2", "text": "dup"}')
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=":7"):
            load_corpus(p)

    def test_malformed_line_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id": "a", "text": "ok"}\n{"id": broken\n')
        with pytest.raises(DataError, match=":2"):
            load_corpus(p)

    def test_missing_fields(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"docid": "a"}\n')
        with pytest.raises(DataError, match="'id' and 'text'"):
            load_corpus(p)


class TestTriplets:
    def test_text_mode(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("what is x\tpos doc\tneg doc\n")
        (t,) = load_triplets(p)
        assert t.query_text == "what is x"
        assert t.positive_text == "pos doc"

    def test_id_mode_resolves(self, tmp_path):
        corpus_p = tmp_path / "c.jsonl"
        corpus_p.write_text('{"id": "d1", "text": "alpha"}\n{"id": "d2", "text": "beta"}\n')
        queries_p = tmp_path / "q.jsonl"
        queries_p.write_text('{"id": "q1", "text": "find alpha"}\n')
        trip_p = tmp_path / "t.tsv"
        trip_p.write_text("q1\td1\td2\n")
        corpus = load_corpus(corpus_p)
        queries = load_corpus(queries_p)
        (t,) = load_triplets(trip_p, corpus, queries)
        assert t.query_text == "find alpha"
        assert t.positive_text == "alpha" and t.negative_text == "beta"
        assert t.query_id == "q1"

    def test_unknown_id_names_line(self, tmp_path):
        corpus_p = tmp_path / "c.jsonl"
        corpus_p.write_text('{"id": "d1", "text": "alpha"}\n')
        queries_p = tmp_path / "q.jsonl"
        queries_p.write_text('{"id": "q1", "text": "z"}\n')
        trip_p = tmp_path / "t.tsv"
        trip_p.write_text("q1\td1\tdX\n")
        with pytest.raises(DataError, match="dX"):
            load_triplets(trip_p, load_corpus(corpus_p), load_corpus(queries_p),
                          mode="ids")

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("only\ttwo\n")
        with pytest.raises(DataError, match="3 tab"):
            load_triplets(p)

    def test_identical_pos_neg_rejected(self):
        with pytest.raises(DataError, match="identical"):
            Triplet("q", "same", "same")
