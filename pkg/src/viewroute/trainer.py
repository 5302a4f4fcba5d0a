"""End-to-end training of encoder towers plus the routing head.

Triplet (or in-batch) softmax cross-entropy over scorer outputs; AdamW
with linear warmup and cosine decay; linear temperature annealing for the
Gumbel selection. With the routed scorer the selected query view enters
the score through the straight-through combination, so gradients reach the
router and the views it did not select.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import Corpus, Triplet
from .encoder import Encoder, EncoderConfig, ViewMatrix, save_checkpoint
from .metrics import Qrels, RunList, mrr_at_k
from .router import RouterParams, route, route_tensor
from .scoring import SCORERS

LR_GRID = (5e-6, 1e-5, 3e-5, 5e-5)  # reference sweep for full-scale runs


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-5
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 2000
    tau_start: float = 1.0
    tau_end: float = 0.1
    epsilon_mask: float = 0.05
    batch_size: int = 32
    seed: int = 0
    scorer: str = "routed"
    negatives: str = "triplet"  # or "in_batch"
    router_dk: int = 32
    # >0 trains the encoder alone (sum_max scorer) for the first steps and
    # brings the router in afterwards; 0 trains everything jointly from step 0
    router_start_step: int = 0
    eval_every: int = 500
    eval_topk: int = 10
    loss_temperature: float = 1.0  # scores are divided by this in the CE
    distill_kl: bool = False  # reserved: KL distillation from a lexical teacher

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 < self.tau_end <= self.tau_start:
            raise ValueError(
                f"need 0 < tau_end <= tau_start, got {self.tau_end}, {self.tau_start}"
            )
        if self.total_steps < self.warmup_steps:
            raise ValueError("total_steps must be >= warmup_steps")
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}; pick one of {SCORERS}")
        if self.negatives not in ("triplet", "in_batch"):
            raise ValueError(f"unknown negatives mode {self.negatives!r}")
        if self.loss_temperature <= 0:
            raise ValueError("loss_temperature must be positive")
        if self.distill_kl:
            raise NotImplementedError(
                "distill_kl is a configuration stub; KL distillation from a "
                "lexical teacher is not implemented"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.lr, then cosine decay to zero at total_steps."""
    if step < 0 or step > cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    progress = (step - cfg.warmup_steps) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def tau_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear anneal from tau_start to tau_end over training."""
    frac = min(max(step / max(cfg.total_steps, 1), 0.0), 1.0)
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac


class AdamW:
    """Decoupled weight decay Adam with bias-corrected moments."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def step(self, lr: float, skip=()):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if name in skip:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# differentiable scoring

def score_graph(scorer: str, q_rows: Tensor, d_rows: Tensor,
                router: RouterParams | None = None, tau: float = 1.0,
                epsilon: float = 0.05, rng=None, train_mode: bool = True,
                relax_router: bool = False):
    """One scalar score node for a (query, doc) pair of encoded row tensors.

    Returns ``(score, routing_output_or_None)``. ``relax_router`` swaps the
    straight-through combination for the soft Gumbel weights, which makes
    the whole loss an ordinary differentiable function (used by gradient
    checks).
    """
    m = q_rows.data.shape[0]
    if scorer == "routed":
        rout = route_tensor(q_rows, np.arange(m), m, router, tau, epsilon,
                            None, rng, train_mode=train_mode)
        weights = rout.alpha_hat_node if relax_router else rout.ste
        sel = ad.matmul(ad.reshape(weights, (1, m)), q_rows)
        s, _ = ad.tmax(ad.matmul(d_rows, ad.transpose(sel)))
        return s, rout
    if scorer == "mean_view":
        w = Tensor(np.full((1, m), 1.0 / m))
        sel = ad.matmul(w, q_rows)
        s, _ = ad.tmax(ad.matmul(d_rows, ad.transpose(sel)))
        return s, None
    if scorer == "single_view":
        qc = ad.reshape(ad.take_rows(q_rows, [0]), (-1,))
        dc = ad.reshape(ad.take_rows(d_rows, [0]), (-1,))
        return ad.dot(qc, dc), None
    if scorer == "sum_max":
        sim = ad.matmul(q_rows, ad.transpose(d_rows))
        per_view, _ = ad.tmax(sim, axis=1)
        return ad.tsum(per_view), None
    if scorer == "max_max":
        sim = ad.matmul(q_rows, ad.transpose(d_rows))
        s, _ = ad.tmax(sim)
        return s, None
    raise ValueError(f"unknown scorer {scorer!r}")


def triplet_loss(encoder: Encoder, router: RouterParams | None,
                 q_ids, pos_ids, neg_ids, cfg: TrainConfig, tau: float,
                 rng=None, extra_doc_rows=(), relax_router: bool = False):
    """Cross-entropy of the positive among {positive, negative, extras}.

    Returns ``(loss_node, routing_output_or_None)``.
    """
    q_rows = encoder.encode_tokens(q_ids, "query")
    pos_rows = encoder.encode_tokens(pos_ids, "document")
    neg_rows = encoder.encode_tokens(neg_ids, "document")
    scores = []
    rout = None
    for d_rows in (pos_rows, neg_rows, *extra_doc_rows):
        s, r = score_graph(cfg.scorer, q_rows, d_rows, router, tau,
                           cfg.epsilon_mask, rng, train_mode=True,
                           relax_router=relax_router)
        if rout is None:
            rout = r
        scores.append(s)
    return _cross_entropy(scores, cfg.loss_temperature), rout


def _cross_entropy(scores, temperature: float):
    """-log softmax probability of the first (positive) candidate."""
    svec = ad.scale(ad.stack_vector(scores), 1.0 / temperature)
    basis = np.zeros(len(scores))
    basis[0] = 1.0
    return ad.sub(ad.logsumexp(svec), ad.dot(svec, Tensor(basis)))


# ---------------------------------------------------------------------------
# brute-force retrieval (dev evaluation and small-scale search)

def encode_corpus(encoder: Encoder, corpus: Corpus) -> list[ViewMatrix]:
    return [
        encoder.encode(encoder.tokenizer.encode(text), "document", owner_id=doc_id)
        for doc_id, text in corpus.records
    ]


def retrieve_brute(encoder: Encoder, router: RouterParams | None,
                   doc_matrices: list[ViewMatrix], queries: Corpus,
                   scorer: str, top_k: int = 10, tau: float = 1.0) -> list[RunList]:
    """Exact retrieval over encoded documents for each query.

    Routing runs in deterministic evaluation mode. Scores equal the
    corresponding scoring-module functions on every pair.
    """
    doc_ids = [vm.owner_id for vm in doc_matrices]
    doc_id_arr = np.asarray(doc_ids, dtype=np.str_)
    counts = [int(vm.valid_mask.sum()) for vm in doc_matrices]
    starts = np.cumsum([0] + counts[:-1])
    stacked = np.concatenate([vm.valid_rows() for vm in doc_matrices])
    cls_rows = np.stack([vm.rows[0] for vm in doc_matrices])
    runs = []
    for qid, text in queries.records:
        qvm = encoder.encode(encoder.tokenizer.encode(text), "query", owner_id=qid)
        if scorer == "routed":
            rout = route(qvm, router, tau=tau, epsilon=0.0, train_mode=False)
            qvec = qvm.rows[rout.selected]
            doc_scores = np.maximum.reduceat(stacked @ qvec, starts)
        elif scorer == "mean_view":
            qvec = qvm.valid_rows().mean(axis=0)
            doc_scores = np.maximum.reduceat(stacked @ qvec, starts)
        elif scorer == "single_view":
            doc_scores = cls_rows @ qvm.rows[0]
        elif scorer == "sum_max":
            sims = np.maximum.reduceat(stacked @ qvm.valid_rows().T, starts, axis=0)
            doc_scores = sims.sum(axis=1)
        elif scorer == "max_max":
            doc_scores = np.maximum.reduceat(
                stacked @ qvm.valid_rows().T, starts, axis=0
            ).max(axis=1)
        else:
            raise ValueError(f"unknown scorer {scorer!r}")
        order = np.lexsort((doc_id_arr, -doc_scores))[:top_k]
        runs.append(RunList(qid, [(doc_ids[i], float(doc_scores[i])) for i in order]))
    return runs


# ---------------------------------------------------------------------------
# training loop

@dataclass
class DevSet:
    queries: Corpus
    qrels: Qrels


@dataclass
class TrainResult:
    encoder: Encoder
    router: RouterParams
    log: list = field(default_factory=list)
    best_dev_mrr: float | None = None
    best_step: int | None = None
    checkpoint_path: str | None = None


def train(corpus: Corpus, triplets: list[Triplet], cfg: TrainConfig,
          encoder_config: EncoderConfig | None = None,
          dev: DevSet | None = None, out_dir=None,
          log_sink=None) -> TrainResult:
    """Run the full optimization; returns the trained model and step log.

    With a dev set, the best checkpoint by dev MRR@10 is kept; otherwise
    the final state is saved. The whole run is a deterministic function of
    the config seed.
    """
    enc_cfg = encoder_config or EncoderConfig()
    encoder = Encoder(enc_cfg, seed=cfg.seed)
    router = RouterParams.init(enc_cfg.dims, min(cfg.router_dk, enc_cfg.dims),
                               seed=cfg.seed)
    params = {**encoder.params, **router.named_tensors()}
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    router_names = set(router.named_tensors())

    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    gumbel_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    tok = encoder.tokenizer
    encoded_triplets = [
        (tok.encode(t.query_text), tok.encode(t.positive_text), tok.encode(t.negative_text))
        for t in triplets
    ]
    if not encoded_triplets and cfg.total_steps > 0:
        raise TrainingError("no triplets to train on")

    result = TrainResult(encoder=encoder, router=router)
    dev_docs: list[ViewMatrix] | None = None
    order: list[int] = []
    cursor = 0
    epoch = 0

    def next_batch():
        nonlocal order, cursor, epoch
        batch = []
        for _ in range(cfg.batch_size):
            if cursor >= len(order):
                order = list(data_rng.permutation(len(encoded_triplets)))
                cursor = 0
                epoch += 1
            batch.append(encoded_triplets[order[cursor]])
            cursor += 1
        return batch

    def emit(rec: dict):
        result.log.append(rec)
        if log_sink is not None:
            log_sink.write(json.dumps(rec, sort_keys=True) + "\n")

    def run_dev_eval(step: int) -> float:
        docs = encode_corpus(encoder, corpus)
        runs = retrieve_brute(encoder, router, docs, dev.queries, cfg.scorer,
                              top_k=cfg.eval_topk)
        vals = [v for v in (mrr_at_k(r, dev.qrels, cfg.eval_topk) for r in runs)
                if v is not None]
        return sum(vals) / len(vals) if vals else 0.0

    ckpt_path = str(Path(out_dir) / "checkpoint.bin") if out_dir is not None else None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    for step in range(1, cfg.total_steps + 1):
        tau = tau_schedule(step, cfg)
        batch = next_batch()
        losses = []
        hist: dict[int, int] = {}
        extra_rows = []
        staged_warmup = step <= cfg.router_start_step and cfg.scorer == "routed"
        step_cfg = cfg if not staged_warmup else _replace_scorer(cfg, "sum_max")
        if cfg.negatives == "in_batch":
            with_pos = [encoder.encode_tokens(p, "document") for _, p, _ in batch]
        for bi, (q_ids, pos_ids, neg_ids) in enumerate(batch):
            if cfg.negatives == "in_batch":
                extra_rows = [r for j, r in enumerate(with_pos) if j != bi]
                loss_t, rout = _loss_prebuilt(
                    encoder, router, q_ids, with_pos[bi], neg_ids, step_cfg, tau,
                    gumbel_rng, extra_rows)
            else:
                loss_t, rout = triplet_loss(encoder, router, q_ids, pos_ids,
                                            neg_ids, step_cfg, tau, gumbel_rng)
            losses.append(loss_t)
            if rout is not None:
                hist[rout.selected] = hist.get(rout.selected, 0) + 1
        total = ad.scale(ad.tsum(ad.stack_vector(losses)), 1.0 / len(losses))
        loss_val = float(total.data)
        if not math.isfinite(loss_val):
            raise TrainingError(
                f"non-finite loss at step {step} (lr={lr_schedule(step, cfg):g}, "
                f"tau={tau:g})"
            )
        ad.backward(total)
        opt.step(lr_schedule(step, cfg), skip=router_names if staged_warmup else ())
        opt.zero_grad()

        rec = {
            "step": step,
            "loss": loss_val,
            "lr": lr_schedule(step, cfg),
            "tau": tau,
            "epoch": epoch,
            "selected": {str(k): v for k, v in sorted(hist.items())},
        }
        if dev is not None and cfg.eval_every > 0 and step % cfg.eval_every == 0:
            mrr = run_dev_eval(step)
            rec["dev_mrr"] = mrr
            if result.best_dev_mrr is None or mrr > result.best_dev_mrr:
                result.best_dev_mrr = mrr
                result.best_step = step
                if ckpt_path:
                    save_checkpoint(ckpt_path, encoder,
                                    {n: t.data for n, t in router.named_tensors().items()})
                    result.checkpoint_path = ckpt_path
        emit(rec)

    if dev is not None and cfg.total_steps > 0 and cfg.eval_every > 0 \
            and cfg.total_steps % cfg.eval_every != 0:
        mrr = run_dev_eval(cfg.total_steps)
        emit({"step": cfg.total_steps, "dev_mrr": mrr, "final": True})
        if result.best_dev_mrr is None or mrr > result.best_dev_mrr:
            result.best_dev_mrr = mrr
            result.best_step = cfg.total_steps
            if ckpt_path:
                save_checkpoint(ckpt_path, encoder,
                                {n: t.data for n, t in router.named_tensors().items()})
                result.checkpoint_path = ckpt_path

    if ckpt_path and result.checkpoint_path is None:
        save_checkpoint(ckpt_path, encoder,
                        {n: t.data for n, t in router.named_tensors().items()})
        result.checkpoint_path = ckpt_path
    return result


def _replace_scorer(cfg: TrainConfig, scorer: str) -> TrainConfig:
    d = cfg.to_dict()
    d["scorer"] = scorer
    return TrainConfig(**d)


def _loss_prebuilt(encoder, router, q_ids, pos_rows, neg_ids, cfg, tau, rng,
                   extra_doc_rows):
    """Triplet loss where the positive document rows are already encoded."""
    q_rows = encoder.encode_tokens(q_ids, "query")
    neg_rows = encoder.encode_tokens(neg_ids, "document")
    scores = []
    rout = None
    for d_rows in (pos_rows, neg_rows, *extra_doc_rows):
        s, r = score_graph(cfg.scorer, q_rows, d_rows, router, tau,
                           cfg.epsilon_mask, rng, train_mode=True)
        if rout is None:
            rout = r
        scores.append(s)
    return _cross_entropy(scores, cfg.loss_temperature), rout
