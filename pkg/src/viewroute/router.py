"""Dynamic view selection head.

Scores each view of a query by self-attention over the view rows followed
by a dense layer, turns the scores into a distribution, and selects a
single view: by Gumbel-perturbed sampling with a straight-through one-hot
during training, by plain argmax at evaluation time.

Masking convention: the binary mask suppresses views where it is 1
(``alpha * (1 - mask) + epsilon``); the epsilon floor applies to valid
views only, and the result is renormalized to a distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ViewMatrix


class RoutingError(RuntimeError):
    """No view can be routed to."""


class RouterConfigError(ValueError):
    """Invalid router hyperparameters."""


U_CLAMP = 1e-12  # keeps -log(-log(u)) finite


@dataclass
class RouterParams:
    """Learned weights: Q/K transformations and the scoring dense layer."""

    wq: Tensor
    wk: Tensor
    dense_w: Tensor
    dense_b: Tensor

    @classmethod
    def init(cls, dims: int, dk: int, seed: int = 0) -> "RouterParams":
        if dk <= 0:
            raise RouterConfigError(f"key width must be positive, got {dk}")
        if dk > dims:
            raise RouterConfigError(f"key width {dk} exceeds view dims {dims}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x707E]))
        # Xavier-scale init: attention scores must differ across views from
        # the start or the dense readout sees a view-independent average
        sq = 1.0 / math.sqrt(dims)
        sk = 1.0 / math.sqrt(dk)
        return cls(
            wq=Tensor(rng.normal(0.0, sq, (dims, dk)), requires_grad=True),
            wk=Tensor(rng.normal(0.0, sq, (dims, dk)), requires_grad=True),
            dense_w=Tensor(rng.normal(0.0, sk, (dk, 1)), requires_grad=True),
            dense_b=Tensor(np.zeros(1), requires_grad=True),
        )

    @property
    def dims(self) -> int:
        return self.wq.data.shape[0]

    @property
    def dk(self) -> int:
        return self.wq.data.shape[1]

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "router.Wq": self.wq,
            "router.Wk": self.wk,
            "router.dense.w": self.dense_w,
            "router.dense.b": self.dense_b,
        }

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray]) -> "RouterParams":
        try:
            return cls(
                wq=Tensor(tensors["router.Wq"], requires_grad=True),
                wk=Tensor(tensors["router.Wk"], requires_grad=True),
                dense_w=Tensor(tensors["router.dense.w"], requires_grad=True),
                dense_b=Tensor(tensors["router.dense.b"], requires_grad=True),
            )
        except KeyError as e:
            raise RouterConfigError(f"checkpoint missing router tensor {e}")

    def set_requires_grad(self, flag: bool):
        for t in (self.wq, self.wk, self.dense_w, self.dense_b):
            t.requires_grad = flag


@dataclass
class RoutingOutput:
    """Everything the selection produced, indexed by original view position.

    Padding / invalid positions carry -inf in ``attn`` and ``logits`` and 0
    in the distributions.
    """

    attn: np.ndarray
    logits: np.ndarray
    alpha: np.ndarray
    alpha_hat: np.ndarray
    onehot: np.ndarray
    selected: int
    tau: float
    ste: Tensor | None = None  # graph handle, train mode only
    alpha_hat_node: Tensor | None = None
    valid_indices: np.ndarray | None = None


def _logits_graph(rows: Tensor, p: RouterParams):
    """Per-view scores on the graph: self-attention then dense. Returns
    (logits (m,), attention matrix (m,m) as numpy)."""
    q = ad.matmul(rows, p.wq)
    k = ad.matmul(rows, p.wk)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(p.dk))
    attn = ad.softmax(scores, axis=-1)
    attended = ad.matmul(attn, k)
    logits = ad.add(ad.matmul(attended, p.dense_w), p.dense_b)
    m = rows.data.shape[0]
    return ad.reshape(logits, (m,)), scores.data


def attention_scores(v: ViewMatrix, p: RouterParams) -> np.ndarray:
    """Pairwise view-attention scores Q(v_i)·K(v_j)/sqrt(dk).

    Rows and columns at padding positions are -inf.
    """
    if p.dk <= 0:
        raise RouterConfigError("key width must be positive")
    valid = v.valid_indices()
    out = np.full((v.views, v.views), -np.inf)
    if valid.size == 0:
        return out
    rows = v.rows[valid]
    q = rows @ p.wq.data
    k = rows @ p.wk.data
    out[np.ix_(valid, valid)] = (q @ k.T) / math.sqrt(p.dk)
    return out


def view_logits(v: ViewMatrix, p: RouterParams) -> np.ndarray:
    """Per-view routing score; -inf at padding positions."""
    valid = v.valid_indices()
    out = np.full(v.views, -np.inf)
    if valid.size == 0:
        return out
    with ad.no_grad():
        logits, _ = _logits_graph(Tensor(v.rows[valid]), p)
    out[valid] = logits.data
    return out


def gumbel_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """-log(-log u) with u clamped away from {0, 1}."""
    u = np.clip(rng.uniform(size=n), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau: float, rng: np.random.Generator | None = None,
                   deterministic: bool = False):
    """Tempered softmax of Gumbel-perturbed logits.

    Returns ``(alpha_hat, onehot, selected)``. With ``deterministic`` the
    noise is identically zero (evaluation mode).
    """
    if tau <= 0:
        raise RouterConfigError(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(logits)
    if not finite.any():
        raise RoutingError("no routable view: all logits are -inf")
    if deterministic:
        g = np.zeros_like(logits)
    else:
        if rng is None:
            raise RouterConfigError("sampling mode requires an rng")
        g = gumbel_noise(rng, logits.shape[0])
    perturbed = np.where(finite, (logits + g) / tau, -np.inf)
    shifted = perturbed - np.max(perturbed)
    e = np.where(finite, np.exp(shifted), 0.0)
    alpha_hat = e / e.sum()
    selected = int(np.argmax(alpha_hat))
    onehot = np.zeros_like(logits)
    onehot[selected] = 1.0
    return alpha_hat, onehot, selected


def apply_mask(alpha, mask, epsilon: float, valid=None) -> np.ndarray:
    """Suppress masked views and renormalize: ``alpha*(1-mask) + epsilon``.

    The epsilon floor is added to valid views only; padding positions stay
    at zero. Raises RoutingError when the mask suppresses every valid view.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if alpha.shape != mask.shape:
        raise ValueError(f"alpha/mask shapes disagree: {alpha.shape} vs {mask.shape}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if valid is None:
        valid = np.ones_like(alpha, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise RoutingError("no routable view: all views are padding")
    if (mask[valid] >= 1.0).all():
        raise RoutingError("no routable view: every valid view is masked")
    out = np.zeros_like(alpha)
    out[valid] = alpha[valid] * (1.0 - mask[valid]) + epsilon
    total = out.sum()
    if total <= 0:
        raise RoutingError("no routable view: mask left zero total probability")
    return out / total


def route(v: ViewMatrix, p: RouterParams, tau: float = 1.0, epsilon: float = 0.05,
          mask: np.ndarray | None = None, rng: np.random.Generator | None = None,
          train_mode: bool = False) -> RoutingOutput:
    """Full selection pipeline on a ViewMatrix (inference entry point)."""
    valid = v.valid_indices()
    if valid.size == 0:
        raise RoutingError("no routable view: all views are padding")
    with ad.no_grad():
        out, _ = _route_valid(
            Tensor(v.rows[valid]), valid, v.views, p, tau, epsilon, mask, rng,
            train_mode,
        )
    return out


def route_tensor(rows: Tensor, valid_indices: np.ndarray, total_views: int,
                 p: RouterParams, tau: float, epsilon: float,
                 mask: np.ndarray | None, rng: np.random.Generator | None,
                 train_mode: bool) -> RoutingOutput:
    """Graph-building variant used by the trainer.

    ``rows`` holds only the valid view rows; ``valid_indices`` maps them
    back to positions in the original matrix. In train mode the returned
    output carries the straight-through node (``ste``) whose forward value
    is the hard one-hot over valid rows.
    """
    out, _ = _route_valid(rows, valid_indices, total_views, p, tau, epsilon,
                          mask, rng, train_mode)
    return out


def _route_valid(rows: Tensor, valid: np.ndarray, total_views: int,
                 p: RouterParams, tau: float, epsilon: float,
                 mask: np.ndarray | None, rng, train_mode: bool):
    if tau <= 0:
        raise RouterConfigError(f"temperature must be positive, got {tau}")
    m = rows.data.shape[0]
    logits_t, attn_scores = _logits_graph(rows, p)
    alpha_t = ad.softmax(logits_t, axis=-1)

    if mask is None:
        mask_valid = np.zeros(m)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        mask_valid = mask[valid] if mask.shape[0] == total_views else mask
        if mask_valid.shape[0] != m:
            raise ValueError(
                f"mask length {mask.shape[0]} matches neither total views "
                f"{total_views} nor valid views {m}"
            )
    if (mask_valid >= 1.0).all():
        raise RoutingError("no routable view: every valid view is masked")

    keep = Tensor(1.0 - mask_valid)
    floored = ad.add(ad.mul(alpha_t, keep), Tensor(np.full(m, epsilon)))
    total = ad.tsum(floored)
    if float(total.data) <= 0:
        raise RoutingError("no routable view: mask left zero total probability")
    alpha_masked = ad.div_scalar(floored, total)

    if train_mode:
        g = gumbel_noise(rng, m) if rng is not None else np.zeros(m)
    else:
        g = np.zeros(m)
    log_alpha = ad.log(alpha_masked)
    perturbed = ad.scale(ad.add(log_alpha, Tensor(g)), 1.0 / tau)
    alpha_hat_t = ad.softmax(perturbed, axis=-1)

    sel_valid = int(np.argmax(alpha_hat_t.data))
    onehot_valid = np.zeros(m)
    onehot_valid[sel_valid] = 1.0
    ste = ad.straight_through(alpha_hat_t, onehot_valid) if train_mode else None

    def expand(vec):
        full = np.zeros(total_views)
        full[valid] = vec
        return full

    attn_full = np.full((total_views, total_views), -np.inf)
    attn_full[np.ix_(valid, valid)] = attn_scores
    logits_full = np.full(total_views, -np.inf)
    logits_full[valid] = logits_t.data

    out = RoutingOutput(
        attn=attn_full,
        logits=logits_full,
        alpha=expand(alpha_masked.data),
        alpha_hat=expand(alpha_hat_t.data),
        onehot=expand(onehot_valid),
        selected=int(valid[sel_valid]),
        tau=tau,
        ste=ste,
        alpha_hat_node=alpha_hat_t,
        valid_indices=valid,
    )
    return out, alpha_hat_t
