"""Per-token embedding towers for queries and documents.

A small pre-LN transformer encoder (sizes are config-driven) produces one
embedding row per input position, with a leading CLS row, all right-
multiplied by a shared output projection. Towers are either tied (query and
document share every weight) or split. Also owns the on-disk formats for
embedding dumps and model checkpoints.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensorio
from .autodiff import Tensor

logger = logging.getLogger(__name__)

CLS_ID = 0
PAD_ID = 1
_RESERVED_IDS = 2


class VocabError(ValueError):
    """Token id outside the configured vocabulary."""


class IngestError(IOError):
    """Embedding dump manifest and payload disagree."""


@dataclass
class ViewMatrix:
    """Token-level embedding rows for one query or document.

    Row 0 is the CLS view. ``valid_mask`` is False on padding rows, which
    every downstream max/sum skips.
    """

    owner_id: str
    rows: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {self.rows.shape}")
        if self.valid_mask.shape != (self.rows.shape[0],):
            raise ValueError(
                f"valid_mask length {self.valid_mask.shape} does not match "
                f"{self.rows.shape[0]} views"
            )

    @property
    def views(self) -> int:
        return self.rows.shape[0]

    @property
    def dims(self) -> int:
        return self.rows.shape[1]

    def valid_rows(self) -> np.ndarray:
        return self.rows[self.valid_mask]

    def valid_indices(self) -> np.ndarray:
        return np.flatnonzero(self.valid_mask)


def cls_view(v: ViewMatrix) -> np.ndarray:
    """Row 0: the single-vector representation."""
    return v.rows[0]


@dataclass
class EncoderConfig:
    layers: int = 2
    dims: int = 64
    heads: int = 4
    vocab_size: int = 1024
    tied_towers: bool = False
    max_query_len: int = 30
    max_doc_len: int = 200
    activation: str = "gelu"
    hidden: int | None = None
    ff_mult: int = 4
    normalize_rows: bool = True

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.dims
        if self.hidden % self.heads != 0:
            raise ValueError(
                f"hidden width {self.hidden} not divisible by {self.heads} heads"
            )
        if self.activation not in ("gelu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class HashTokenizer:
    """Whitespace split + stable CRC32 hashing into the vocabulary.

    Ids 0 and 1 are reserved (CLS, padding); text tokens map to
    ``2 .. vocab_size-1``. The hash is platform-independent.
    """

    def __init__(self, vocab_size: int):
        if vocab_size <= _RESERVED_IDS:
            raise ValueError(f"vocab_size must exceed {_RESERVED_IDS}")
        self.vocab_size = vocab_size

    def token_id(self, token: str) -> int:
        span = self.vocab_size - _RESERVED_IDS
        return _RESERVED_IDS + zlib.crc32(token.encode("utf-8")) % span

    def encode(self, text: str) -> list[int]:
        return [self.token_id(t) for t in text.split()]


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, cols))


class Encoder:
    """Transformer towers producing ViewMatrix embeddings.

    Parameters live in an ordered name -> Tensor dict so checkpoints and
    optimizer state are deterministic. With ``tied_towers`` both towers
    resolve to the same parameter set.
    """

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        self.tokenizer = HashTokenizer(config.vocab_size)
        self.params: dict[str, Tensor] = {}
        self.truncation_count = 0
        self._warned_truncation = False
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE2C0]))
        towers = ["enc"] if config.tied_towers else ["query", "doc"]
        for tower in towers:
            self._init_tower(tower, rng)

    # -- parameters ---------------------------------------------------------

    def _init_tower(self, prefix: str, rng: np.random.Generator):
        cfg = self.config
        h = cfg.hidden
        max_len = max(cfg.max_query_len, cfg.max_doc_len) + 1
        p = self.params

        def mat(name, r, c):
            p[f"{prefix}.{name}"] = Tensor(_glorot(rng, r, c), requires_grad=True)

        def vec(name, n, value=0.0):
            p[f"{prefix}.{name}"] = Tensor(np.full(n, value), requires_grad=True)

        mat("tok_emb", cfg.vocab_size, h)
        mat("pos_emb", max_len, h)
        for i in range(cfg.layers):
            vec(f"l{i}.ln1.g", h, 1.0)
            vec(f"l{i}.ln1.b", h)
            mat(f"l{i}.attn.wq", h, h)
            mat(f"l{i}.attn.wk", h, h)
            mat(f"l{i}.attn.wv", h, h)
            vec(f"l{i}.attn.bq", h)
            vec(f"l{i}.attn.bk", h)
            vec(f"l{i}.attn.bv", h)
            mat(f"l{i}.attn.wo", h, h)
            vec(f"l{i}.attn.bo", h)
            vec(f"l{i}.ln2.g", h, 1.0)
            vec(f"l{i}.ln2.b", h)
            mat(f"l{i}.ff.w1", h, h * cfg.ff_mult)
            vec(f"l{i}.ff.b1", h * cfg.ff_mult)
            mat(f"l{i}.ff.w2", h * cfg.ff_mult, h)
            vec(f"l{i}.ff.b2", h)
        vec("lnf.g", h, 1.0)
        vec("lnf.b", h)
        mat("proj", h, cfg.dims)

    def _prefix(self, tower: str) -> str:
        if tower not in ("query", "document"):
            raise ValueError(f"unknown tower {tower!r}")
        if self.config.tied_towers:
            return "enc"
        return "query" if tower == "query" else "doc"

    def set_requires_grad(self, flag: bool):
        for t in self.params.values():
            t.requires_grad = flag

    # -- forward ------------------------------------------------------------

    def _check_ids(self, ids) -> list[int]:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.config.vocab_size:
                raise VocabError(
                    f"token id {i} outside vocab of size {self.config.vocab_size}"
                )
            out.append(i)
        return out

    def encode_tokens(self, token_ids, tower: str) -> Tensor:
        """Forward one token-id sequence; returns the (len+1, dims) rows.

        Prepends the CLS position; over-length inputs are truncated and
        counted in ``truncation_count``.
        """
        cfg = self.config
        ids = self._check_ids(token_ids)
        max_len = cfg.max_query_len if tower == "query" else cfg.max_doc_len
        if len(ids) > max_len:
            self.truncation_count += 1
            if not self._warned_truncation:
                logger.warning(
                    "truncating %s input of %d tokens to %d (further "
                    "truncations counted silently)",
                    tower, len(ids), max_len,
                )
                self._warned_truncation = True
            ids = ids[:max_len]
        seq = [CLS_ID] + ids
        pre = self._prefix(tower)
        p = self.params
        act = ad.gelu if cfg.activation == "gelu" else ad.tanh

        x = ad.add(
            ad.take_rows(p[f"{pre}.tok_emb"], seq),
            ad.take_rows(p[f"{pre}.pos_emb"], list(range(len(seq)))),
        )
        heads = cfg.heads
        hd = cfg.hidden // heads
        inv_sqrt = 1.0 / math.sqrt(hd)
        for i in range(cfg.layers):
            ln = ad.layer_norm(x, p[f"{pre}.l{i}.ln1.g"], p[f"{pre}.l{i}.ln1.b"])
            q = ad.add(ad.matmul(ln, p[f"{pre}.l{i}.attn.wq"]), p[f"{pre}.l{i}.attn.bq"])
            k = ad.add(ad.matmul(ln, p[f"{pre}.l{i}.attn.wk"]), p[f"{pre}.l{i}.attn.bk"])
            v = ad.add(ad.matmul(ln, p[f"{pre}.l{i}.attn.wv"]), p[f"{pre}.l{i}.attn.bv"])
            head_outs = []
            for hidx in range(heads):
                lo, hi = hidx * hd, (hidx + 1) * hd
                qh = ad.slice_cols(q, lo, hi)
                kh = ad.slice_cols(k, lo, hi)
                vh = ad.slice_cols(v, lo, hi)
                scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
                attn = ad.softmax(scores, axis=-1)
                head_outs.append(ad.matmul(attn, vh))
            merged = head_outs[0] if heads == 1 else ad.concat_cols(head_outs)
            proj = ad.add(ad.matmul(merged, p[f"{pre}.l{i}.attn.wo"]), p[f"{pre}.l{i}.attn.bo"])
            x = ad.add(x, proj)
            ln2 = ad.layer_norm(x, p[f"{pre}.l{i}.ln2.g"], p[f"{pre}.l{i}.ln2.b"])
            ff = ad.add(ad.matmul(ln2, p[f"{pre}.l{i}.ff.w1"]), p[f"{pre}.l{i}.ff.b1"])
            ff = act(ff)
            ff = ad.add(ad.matmul(ff, p[f"{pre}.l{i}.ff.w2"]), p[f"{pre}.l{i}.ff.b2"])
            x = ad.add(x, ff)
        x = ad.layer_norm(x, p[f"{pre}.lnf.g"], p[f"{pre}.lnf.b"])
        x = ad.matmul(x, p[f"{pre}.proj"])
        if cfg.normalize_rows:
            x = ad.normalize_rows(x)
        return x

    def encode(self, token_ids, tower: str, owner_id: str = "") -> ViewMatrix:
        """Inference-mode encode; no graph is recorded."""
        with ad.no_grad():
            rows = self.encode_tokens(token_ids, tower).data
        return ViewMatrix(owner_id, rows, np.ones(rows.shape[0], dtype=bool))

    def encode_text(self, text: str, tower: str, owner_id: str = "") -> ViewMatrix:
        return self.encode(self.tokenizer.encode(text), tower, owner_id)


# ---------------------------------------------------------------------------
# embedding dumps: JSONL manifest + FLT1 payload

MANIFEST_NAME = "manifest.jsonl"
PAYLOAD_NAME = "views.bin"


def dump_embeddings(dirpath, matrices) -> int:
    """Write ViewMatrices (valid rows only) to a dump directory."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(d / PAYLOAD_NAME, "wb") as payload, open(
        d / MANIFEST_NAME, "w", encoding="utf-8"
    ) as manifest:
        offset = 0
        for vm in matrices:
            rows = vm.valid_rows()
            rec = {
                "owner_id": vm.owner_id,
                "views": int(rows.shape[0]),
                "dims": int(rows.shape[1]),
                "offset": offset,
            }
            manifest.write(json.dumps(rec, sort_keys=True) + "\n")
            offset += tensorio.write_tensor(payload, rows)
            n += 1
    return n


def ingest_embeddings(dirpath) -> list[ViewMatrix]:
    """Load a dump directory back into ViewMatrices.

    Raises IngestError naming the first record whose manifest entry and
    payload disagree.
    """
    d = Path(dirpath)
    out: list[ViewMatrix] = []
    with open(d / MANIFEST_NAME, encoding="utf-8") as manifest, open(
        d / PAYLOAD_NAME, "rb"
    ) as payload:
        for idx, line in enumerate(manifest):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                owner = rec["owner_id"]
                views, dims, offset = int(rec["views"]), int(rec["dims"]), int(rec["offset"])
            except (ValueError, KeyError) as e:
                raise IngestError(f"manifest record {idx}: malformed entry ({e})")
            payload.seek(offset)
            try:
                rows = tensorio.read_tensor(payload)
            except tensorio.SerializationError as e:
                raise IngestError(f"manifest record {idx} ({owner!r}): {e}")
            if rows.shape != (views, dims):
                raise IngestError(
                    f"manifest record {idx} ({owner!r}): payload shape "
                    f"{rows.shape} does not match manifest ({views}, {dims})"
                )
            out.append(ViewMatrix(owner, rows, np.ones(views, dtype=bool)))
    return out


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, encoder: Encoder, extra: dict[str, np.ndarray] | None = None):
    """Save encoder weights (plus e.g. router weights) with a config header."""
    tensors = {name: t.data for name, t in encoder.params.items()}
    if extra:
        tensors.update(extra)
    tensorio.save_archive(path, {"encoder": encoder.config.to_dict()}, tensors)


def load_checkpoint(path) -> tuple[Encoder, dict[str, np.ndarray]]:
    """Load a checkpoint; returns the encoder and any non-encoder tensors."""
    config, tensors = tensorio.load_archive(path)
    enc = Encoder(EncoderConfig.from_dict(config["encoder"]))
    extra: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name in enc.params:
            if enc.params[name].data.shape != arr.shape:
                raise tensorio.SerializationError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"expected {enc.params[name].data.shape}"
                )
            enc.params[name] = Tensor(arr, requires_grad=True)
        else:
            extra[name] = arr
    missing = [n for n in enc.params if n not in tensors]
    if missing:
        raise tensorio.SerializationError(
            f"checkpoint missing encoder tensors: {missing[:3]}"
        )
    return enc, extra
