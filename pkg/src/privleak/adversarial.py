"""Demographic readout heads and privacy-adversarial (gradient reversal) training.

The user-factor update is

    p_u <- p_u - alpha * (d loss_rec / d p_u - lam * sum_a d loss_a / d p_u)

while item factors and biases follow plain BPR descent and every head
descends its own cross-entropy. ``lam = 0`` is exactly plain BPR and
``lam < 0`` is multi-task learning.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .data import ATTRIBUTES, Dataset
from .model import (
    ConfigError,
    DivergenceError,
    ModelParams,
    TrainConfig,
    bpr_gradients,
    bpr_triple_loss,
    check_divergence,
    epoch_triples,
    init_params,
)

log = logging.getLogger(__name__)


@dataclasses.dataclass
class AdversarialHead:
    attribute: str
    W: np.ndarray  # k x C
    c: np.ndarray  # C

    def __post_init__(self):
        if self.W.ndim != 2 or self.c.shape != (self.W.shape[1],):
            raise ValueError(f"head {self.attribute}: W {self.W.shape} and c {self.c.shape} do not match")
        if self.n_classes < 2:
            raise ValueError(f"head {self.attribute} needs at least 2 classes")

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    @property
    def k(self) -> int:
        return self.W.shape[0]

    def copy(self) -> AdversarialHead:
        return AdversarialHead(self.attribute, self.W.copy(), self.c.copy())


@dataclasses.dataclass(frozen=True)
class AdvConfig:
    lam: float = 0.0
    head_alpha: float | None = None  # None: share the recommender's alpha
    heads: tuple[str, ...] = ("gender", "age")

    def __post_init__(self):
        if self.head_alpha is not None and not self.head_alpha > 0:
            raise ConfigError(f"head_alpha must be > 0, got {self.head_alpha}")
        unknown = set(self.heads) - ATTRIBUTES.keys()
        if unknown:
            raise ConfigError(f"unknown head attributes: {sorted(unknown)}")

    def resolved_head_alpha(self, alpha: float) -> float:
        return alpha if self.head_alpha is None else self.head_alpha


class HeadGradients(NamedTuple):
    W: np.ndarray
    c: np.ndarray
    p_u: np.ndarray


def init_head(attribute: str, k: int, n_classes: int | None = None) -> AdversarialHead:
    """Zero-initialised head: uniform output, no rng consumed."""
    n_classes = ATTRIBUTES[attribute] if n_classes is None else n_classes
    return AdversarialHead(attribute, np.zeros((k, n_classes)), np.zeros(n_classes))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(head: AdversarialHead, p_u: np.ndarray) -> np.ndarray:
    """Class probabilities for one user vector, or row-wise for a matrix."""
    if np.shape(p_u)[-1] != head.k:
        raise ValueError(f"embedding has dimension {np.shape(p_u)[-1]}, head expects {head.k}")
    return softmax(p_u @ head.W + head.c)


def head_loss(head: AdversarialHead, p_u: np.ndarray, label: int) -> float:
    logits = p_u @ head.W + head.c
    top = logits.max()
    return float(np.log(np.exp(logits - top).sum()) - (logits[label] - top))


def head_gradients(head: AdversarialHead, p_u: np.ndarray, label: int) -> HeadGradients:
    e = head_forward(head, p_u)
    e[label] -= 1.0
    return HeadGradients(W=np.outer(p_u, e), c=e, p_u=head.W @ e)


def privacy_adversarial_step(
    params: ModelParams,
    heads: list[AdversarialHead],
    labels: dict[str, int],
    u: int,
    i: int,
    j: int,
    config: TrainConfig,
    adv: AdvConfig,
) -> tuple[float, dict[str, float]]:
    """Apply one in-place privacy-adversarial update on triple (u, i, j).

    ``labels`` maps each head's attribute to user ``u``'s class. Returns the
    pre-step recommender loss and per-head losses.
    """
    rec_loss = bpr_triple_loss(params, u, i, j, config.reg)
    g = bpr_gradients(params, u, i, j, config.reg)
    p_u = params.P[u].copy()
    head_grads = [head_gradients(h, p_u, labels[h.attribute]) for h in heads]
    losses = {h.attribute: head_loss(h, p_u, labels[h.attribute]) for h in heads}
    g_dem = np.zeros_like(p_u)
    for hg in head_grads:
        g_dem += hg.p_u

    step = g.p_u - adv.lam * g_dem
    if not np.all(np.isfinite(step)):
        raise DivergenceError("non-finite user update", lam=adv.lam)

    head_alpha = adv.resolved_head_alpha(config.alpha)
    for h, hg in zip(heads, head_grads):
        h.W -= head_alpha * hg.W
        h.c -= head_alpha * hg.c
    params.P[u] -= config.alpha * step
    params.Q[i] -= config.alpha * g.q_i
    params.Q[j] -= config.alpha * g.q_j
    params.b[i] -= config.alpha * g.b_i
    params.b[j] -= config.alpha * g.b_j
    return rec_loss, losses


def _pack(heads: list[AdversarialHead]):
    offsets = np.cumsum([0] + [h.n_classes for h in heads]).astype(np.int64)
    W = np.ascontiguousarray(np.concatenate([h.W for h in heads], axis=1))
    c = np.concatenate([h.c for h in heads])
    return W, c, offsets


def _unpack(heads: list[AdversarialHead], W: np.ndarray, c: np.ndarray, offsets: np.ndarray) -> None:
    for h, lo, hi in zip(heads, offsets[:-1], offsets[1:]):
        h.W[...] = W[:, lo:hi]
        h.c[...] = c[lo:hi]


def head_accuracy(head: AdversarialHead, P: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(P @ head.W + head.c, axis=1) == labels))


def train_adversarial_epoch(
    params: ModelParams,
    heads: list[AdversarialHead],
    dataset: Dataset,
    config: TrainConfig,
    adv: AdvConfig,
    rng: np.random.Generator,
    seen_keys=None,
    epoch=None,
) -> tuple[float, dict[str, float]]:
    users, pos, neg = epoch_triples(dataset, rng, seen_keys)
    labels = np.ascontiguousarray(np.stack([dataset.demographics[h.attribute] for h in heads], axis=1), dtype=np.int64)
    W, c, offsets = _pack(heads)
    head_total = np.zeros(len(heads))
    total, bad = _kernels.adversarial_epoch(
        params.P, params.Q, params.b, users, pos, neg, config.alpha, config.reg,
        W, c, offsets, labels, float(adv.lam), adv.resolved_head_alpha(config.alpha), head_total,
    )
    _unpack(heads, W, c, offsets)
    if bad >= 0:
        raise DivergenceError("non-finite update", epoch=epoch, step=int(bad), lam=adv.lam)
    if not (params.is_finite() and np.isfinite(W).all() and np.isfinite(c).all()):
        raise DivergenceError("non-finite parameters", epoch=epoch, lam=adv.lam)
    n = max(len(users), 1)
    return total / n, {h.attribute: float(v / n) for h, v in zip(heads, head_total)}


def train_privacy_adversarial(
    dataset: Dataset,
    config: TrainConfig,
    adv: AdvConfig,
    on_epoch: Callable[[int, ModelParams, dict], None] | None = None,
) -> tuple[ModelParams, list[AdversarialHead], list[dict]]:
    """Full privacy-adversarial training run.

    Parameter init and the triple stream match :func:`privleak.model.train_bpr`
    for the same seed, so ``adv.lam == 0`` reproduces it bit for bit.
    """
    params = init_params(dataset.n_users, dataset.n_items, config.k, config.seed, config.init_scale)
    heads = [init_head(name, config.k) for name in adv.heads]
    rng = np.random.default_rng([config.seed, 1])
    seen = dataset.seen_keys()
    history, losses = [], []
    for epoch in range(1, config.epochs + 1):
        loss, head_losses = train_adversarial_epoch(params, heads, dataset, config, adv, rng, seen, epoch)
        losses.append(loss)
        check_divergence(losses, epoch, adv.lam)
        row = {"epoch": epoch, "mean_loss": loss}
        for h in heads:
            row[f"head_{h.attribute}_loss"] = head_losses[h.attribute]
            row[f"head_{h.attribute}_train_acc"] = head_accuracy(h, params.P, dataset.demographics[h.attribute])
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
        if on_epoch is not None:
            on_epoch(epoch, params, row)
    return params, heads, history
