"""Encoder tests: tower semantics, a step-by-step reference forward,
embedding dumps, and checkpoints."""

import math

import numpy as np
import pytest

from viewroute import tensorio
from viewroute.encoder import (
    CLS_ID,
    Encoder,
    EncoderConfig,
    HashTokenizer,
    IngestError,
    ViewMatrix,
    VocabError,
    cls_view,
    dump_embeddings,
    ingest_embeddings,
    load_checkpoint,
    save_checkpoint,
)


def small_config(**kw):
    base = dict(layers=2, dims=16, heads=2, vocab_size=64, max_query_len=8,
                max_doc_len=12)
    base.update(kw)
    return EncoderConfig(**base)


class TestEncodeBasics:
    def test_empty_tokens_gives_cls_only(self):
        enc = Encoder(small_config(), seed=0)
        vm = enc.encode([], "query", owner_id="empty")
        assert vm.rows.shape == (1, 16)
        assert vm.valid_mask.tolist() == [True]

    def test_tied_towers_identical_bitwise(self):
        enc = Encoder(small_config(tied_towers=True), seed=1)
        q = enc.encode([5, 9, 3], "query")
        d = enc.encode([5, 9, 3], "document")
        assert q.rows.tobytes() == d.rows.tobytes()

    def test_untied_towers_differ(self):
        enc = Encoder(small_config(tied_towers=False), seed=1)
        q = enc.encode([5, 9, 3], "query")
        d = enc.encode([5, 9, 3], "document")
        assert q.rows.tobytes() != d.rows.tobytes()

    def test_deterministic_across_instances(self):
        a = Encoder(small_config(), seed=7).encode([4, 4, 2], "document")
        b = Encoder(small_config(), seed=7).encode([4, 4, 2], "document")
        assert a.rows.tobytes() == b.rows.tobytes()

    def test_normalized_rows(self):
        enc = Encoder(small_config(), seed=0)
        vm = enc.encode([1, 2, 3], "query")
        np.testing.assert_allclose(np.linalg.norm(vm.rows, axis=1), 1.0, atol=1e-9)

    def test_unnormalized_config(self):
        enc = Encoder(small_config(normalize_rows=False), seed=0)
        vm = enc.encode([1, 2, 3], "query")
        norms = np.linalg.norm(vm.rows, axis=1)
        assert not np.allclose(norms, 1.0, atol=1e-3)

    def test_projection_decouples_width_from_output_dims(self):
        enc = Encoder(small_config(hidden=32, dims=16, heads=4), seed=0)
        vm = enc.encode([1, 2], "query")
        assert vm.dims == 16

    def test_truncation_counted(self):
        enc = Encoder(small_config(), seed=0)
        enc.encode(list(range(2, 13)), "query")  # max_query_len=8
        assert enc.truncation_count == 1
        vm = enc.encode(list(range(2, 13)), "query")
        assert enc.truncation_count == 2
        assert vm.views == 9  # CLS + 8 kept tokens

    def test_vocab_range_checked(self):
        enc = Encoder(small_config(), seed=0)
        with pytest.raises(VocabError, match="64"):
            enc.encode([64], "query")

    def test_unknown_tower(self):
        enc = Encoder(small_config(), seed=0)
        with pytest.raises(ValueError, match="tower"):
            enc.encode([1], "doc")

    def test_cls_view_is_row_zero(self):
        enc = Encoder(small_config(), seed=0)
        vm = enc.encode([3, 4], "query")
        np.testing.assert_array_equal(cls_view(vm), vm.rows[0])

    def test_dims_divisible_by_heads_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(dims=10, heads=4)


def _reference_forward(enc: Encoder, token_ids, tower: str) -> np.ndarray:
    """Independent plain-numpy transformer forward over the same weights.

    Written without the graph engine: explicit loops where reasonable so a
    bug shared with the production path is unlikely.
    """
    cfg = enc.config
    pre = "enc" if cfg.tied_towers else ("query" if tower == "query" else "doc")
    p = {k: v.data for k, v in enc.params.items()}
    seq = [CLS_ID] + list(token_ids)
    n = len(seq)
    h = cfg.hidden

    x = np.array([p[f"{pre}.tok_emb"][t] + p[f"{pre}.pos_emb"][i]
                  for i, t in enumerate(seq)])

    def layernorm(mat, g, b):
        out = np.empty_like(mat)
        for i in range(mat.shape[0]):
            mu = mat[i].mean()
            var = ((mat[i] - mu) ** 2).mean()
            out[i] = (mat[i] - mu) / math.sqrt(var + 1e-5) * g + b
        return out

    def softmax_rows(mat):
        out = np.empty_like(mat)
        for i in range(mat.shape[0]):
            e = np.exp(mat[i] - mat[i].max())
            out[i] = e / e.sum()
        return out

    hd = h // cfg.heads
    for li in range(cfg.layers):
        ln = layernorm(x, p[f"{pre}.l{li}.ln1.g"], p[f"{pre}.l{li}.ln1.b"])
        q = ln @ p[f"{pre}.l{li}.attn.wq"] + p[f"{pre}.l{li}.attn.bq"]
        k = ln @ p[f"{pre}.l{li}.attn.wk"] + p[f"{pre}.l{li}.attn.bk"]
        v = ln @ p[f"{pre}.l{li}.attn.wv"] + p[f"{pre}.l{li}.attn.bv"]
        merged = np.zeros((n, h))
        for head in range(cfg.heads):
            sl = slice(head * hd, (head + 1) * hd)
            scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(hd)
            merged[:, sl] = softmax_rows(scores) @ v[:, sl]
        x = x + merged @ p[f"{pre}.l{li}.attn.wo"] + p[f"{pre}.l{li}.attn.bo"]
        ln2 = layernorm(x, p[f"{pre}.l{li}.ln2.g"], p[f"{pre}.l{li}.ln2.b"])
        ff = ln2 @ p[f"{pre}.l{li}.ff.w1"] + p[f"{pre}.l{li}.ff.b1"]
        c = math.sqrt(2.0 / math.pi)
        ff = 0.5 * ff * (1.0 + np.tanh(c * (ff + 0.044715 * ff**3)))
        x = x + ff @ p[f"{pre}.l{li}.ff.w2"] + p[f"{pre}.l{li}.ff.b2"]
    x = layernorm(x, p[f"{pre}.lnf.g"], p[f"{pre}.lnf.b"])
    x = x @ p[f"{pre}.proj"]
    if cfg.normalize_rows:
        for i in range(n):
            x[i] = x[i] / np.linalg.norm(x[i])
    return x


class TestReferenceForward:
    def test_fixed_seed_two_layer_matches_reference(self):
        enc = Encoder(small_config(), seed=11)
        got = enc.encode([5, 9], "query").rows
        want = _reference_forward(enc, [5, 9], "query")
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)

    def test_reference_matches_doc_tower_and_tanh(self):
        enc = Encoder(small_config(activation="tanh"), seed=3)
        ids = [7, 1, 30, 12]
        got = enc.encode(ids, "document").rows
        # tanh activation: swap the GELU step in the reference
        cfg = enc.config
        pre = "doc"
        p = {k: v.data for k, v in enc.params.items()}
        seq = [CLS_ID] + ids
        x = np.array([p[f"{pre}.tok_emb"][t] + p[f"{pre}.pos_emb"][i]
                      for i, t in enumerate(seq)])

        def ln_rows(mat, g, b):
            mu = mat.mean(axis=1, keepdims=True)
            var = mat.var(axis=1, keepdims=True)
            return (mat - mu) / np.sqrt(var + 1e-5) * g + b

        hd = cfg.hidden // cfg.heads
        for li in range(cfg.layers):
            ln = ln_rows(x, p[f"{pre}.l{li}.ln1.g"], p[f"{pre}.l{li}.ln1.b"])
            q = ln @ p[f"{pre}.l{li}.attn.wq"] + p[f"{pre}.l{li}.attn.bq"]
            k = ln @ p[f"{pre}.l{li}.attn.wk"] + p[f"{pre}.l{li}.attn.bk"]
            v = ln @ p[f"{pre}.l{li}.attn.wv"] + p[f"{pre}.l{li}.attn.bv"]
            heads_out = []
            for head in range(cfg.heads):
                sl = slice(head * hd, (head + 1) * hd)
                s = (q[:, sl] @ k[:, sl].T) / np.sqrt(hd)
                e = np.exp(s - s.max(axis=1, keepdims=True))
                heads_out.append((e / e.sum(axis=1, keepdims=True)) @ v[:, sl])
            x = x + np.concatenate(heads_out, axis=1) @ p[f"{pre}.l{li}.attn.wo"] \
                + p[f"{pre}.l{li}.attn.bo"]
            ln2 = ln_rows(x, p[f"{pre}.l{li}.ln2.g"], p[f"{pre}.l{li}.ln2.b"])
            ff = np.tanh(ln2 @ p[f"{pre}.l{li}.ff.w1"] + p[f"{pre}.l{li}.ff.b1"])
            x = x + ff @ p[f"{pre}.l{li}.ff.w2"] + p[f"{pre}.l{li}.ff.b2"]
        x = ln_rows(x, p[f"{pre}.lnf.g"], p[f"{pre}.lnf.b"]) @ p[f"{pre}.proj"]
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        np.testing.assert_allclose(got, x, atol=1e-10, rtol=0)


class TestTokenizer:
    def test_stable_ids(self):
        tok = HashTokenizer(256)
        assert tok.token_id("apple") == tok.token_id("apple")
        assert 2 <= tok.token_id("apple") < 256

    def test_reserved_ids_never_produced(self):
        tok = HashTokenizer(64)
        ids = {tok.token_id(f"t{i}") for i in range(500)}
        assert 0 not in ids and 1 not in ids

    def test_encode_splits_whitespace(self):
        tok = HashTokenizer(64)
        assert tok.encode("a b  c") == [tok.token_id(x) for x in ["a", "b", "c"]]


class TestEmbeddingDump:
    def test_empty_manifest(self, tmp_path):
        dump_embeddings(tmp_path / "e", [])
        assert ingest_embeddings(tmp_path / "e") == []

    def test_round_trip_bitwise(self, tmp_path):
        enc = Encoder(small_config(), seed=2)
        mats = [enc.encode([3, 5], "document", owner_id=f"d{i}") for i in range(4)]
        dump_embeddings(tmp_path / "e", mats)
        back = ingest_embeddings(tmp_path / "e")
        assert [m.owner_id for m in back] == [m.owner_id for m in mats]
        for a, b in zip(mats, back):
            assert a.rows.tobytes() == b.rows.tobytes()

    def test_truncated_payload_names_record(self, tmp_path):
        enc = Encoder(small_config(), seed=2)
        mats = [enc.encode([3], "document", owner_id=f"d{i}") for i in range(3)]
        dump_embeddings(tmp_path / "e", mats)
        payload = tmp_path / "e" / "views.bin"
        payload.write_bytes(payload.read_bytes()[:-20])
        with pytest.raises(IngestError, match="record 2"):
            ingest_embeddings(tmp_path / "e")

    def test_manifest_shape_mismatch(self, tmp_path):
        enc = Encoder(small_config(), seed=2)
        dump_embeddings(tmp_path / "e", [enc.encode([3], "document", owner_id="d0")])
        manifest = tmp_path / "e" / "manifest.jsonl"
        text = manifest.read_text().replace('"views": 2', '"views": 5')
        manifest.write_text(text)
        with pytest.raises(IngestError, match="record 0"):
            ingest_embeddings(tmp_path / "e")

    def test_mask_derived_all_valid(self, tmp_path):
        vm = ViewMatrix("x", np.random.default_rng(0).normal(size=(3, 4)),
                        [True, False, True])
        dump_embeddings(tmp_path / "e", [vm])
        back = ingest_embeddings(tmp_path / "e")[0]
        assert back.views == 2  # only valid rows are dumped
        assert back.valid_mask.all()


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        enc = Encoder(small_config(), seed=5)
        extra = {"router.Wq": np.ones((16, 4))}
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, enc, extra)
        enc2, extra2 = load_checkpoint(path)
        assert enc2.config == enc.config
        for name, t in enc.params.items():
            assert enc2.params[name].data.tobytes() == t.data.tobytes()
        assert extra2["router.Wq"].tobytes() == extra["router.Wq"].tobytes()

    def test_missing_tensor_rejected(self, tmp_path):
        enc = Encoder(small_config(), seed=5)
        path = tmp_path / "ckpt.bin"
        config = {"encoder": enc.config.to_dict()}
        tensors = {n: t.data for n, t in list(enc.params.items())[:-1]}
        tensorio.save_archive(path, config, tensors)
        with pytest.raises(tensorio.SerializationError, match="missing"):
            load_checkpoint(path)
