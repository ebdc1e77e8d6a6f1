"""BPR latent-factor recommender: parameters, loss, gradients, SGD and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels
from .data import Dataset, sample_negatives

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, step: int | None = None, lam: float | None = None):
        self.epoch, self.step, self.lam = epoch, step, lam
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if lam is not None:
            where.append(f"lambda={lam:g}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclasses.dataclass
class ModelParams:
    P: np.ndarray
    Q: np.ndarray
    b: np.ndarray

    @property
    def k(self) -> int:
        return self.P.shape[1]

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> ModelParams:
        return ModelParams(self.P.copy(), self.Q.copy(), self.b.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.P).all() and np.isfinite(self.Q).all() and np.isfinite(self.b).all())


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    k: int = 10
    alpha: float = 0.05
    reg: float = 0.01
    epochs: int = 30
    seed: int = 0
    lam: float = 0.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.reg < 0:
            raise ConfigError(f"reg must be >= 0, got {self.reg}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")


class BPRGradients(NamedTuple):
    p_u: np.ndarray
    q_i: np.ndarray
    q_j: np.ndarray
    b_i: float
    b_j: float


def init_params(n_users: int, n_items: int, k: int, seed: int, init_scale: float = 0.1) -> ModelParams:
    if k < 1 or n_users < 1 or n_items < 1:
        raise ValueError(f"dimensions must be positive: n_users={n_users}, n_items={n_items}, k={k}")
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_scale, size=(n_users, k))
    Q = rng.normal(0.0, init_scale, size=(n_items, k))
    return ModelParams(P, Q, np.zeros(n_items))


def _check_index(idx: int, n: int, kind: str) -> None:
    if not 0 <= idx < n:
        raise IndexError(f"{kind} index {idx} out of range [0, {n})")


def score(params: ModelParams, u: int, i: int) -> float:
    _check_index(u, params.n_users, "user")
    _check_index(i, params.n_items, "item")
    return float(params.P[u] @ params.Q[i] + params.b[i])


def bpr_triple_loss(params: ModelParams, u: int, i: int, j: int, reg: float) -> float:
    x = score(params, u, i) - score(params, u, j)
    p, qi, qj = params.P[u], params.Q[i], params.Q[j]
    penalty = p @ p + qi @ qi + qj @ qj + params.b[i] ** 2 + params.b[j] ** 2
    return float(np.logaddexp(0.0, -x) + reg * penalty)


def bpr_gradients(params: ModelParams, u: int, i: int, j: int, reg: float) -> BPRGradients:
    x = score(params, u, i) - score(params, u, j)
    s = 0.5 * (1.0 - np.tanh(0.5 * x))  # sigma(-x), no overflow
    p, qi, qj = params.P[u], params.Q[i], params.Q[j]
    return BPRGradients(
        p_u=-s * (qi - qj) + 2 * reg * p,
        q_i=-s * p + 2 * reg * qi,
        q_j=s * p + 2 * reg * qj,
        b_i=float(-s + 2 * reg * params.b[i]),
        b_j=float(s + 2 * reg * params.b[j]),
    )


def sgd_step(params: ModelParams, u: int, i: int, j: int, alpha: float, reg: float) -> float:
    """One in-place BPR step on (u, i, j); returns the pre-step loss."""
    loss = bpr_triple_loss(params, u, i, j, reg)
    g = bpr_gradients(params, u, i, j, reg)
    params.P[u] -= alpha * g.p_u
    params.Q[i] -= alpha * g.q_i
    params.Q[j] -= alpha * g.q_j
    params.b[i] -= alpha * g.b_i
    params.b[j] -= alpha * g.b_j
    return loss


def epoch_triples(dataset: Dataset, rng: np.random.Generator, seen_keys=None):
    """Shuffled training pairs with one sampled negative each."""
    users, items = dataset.train_pairs()
    perm = rng.permutation(len(users))
    users, items = users[perm], items[perm]
    return users, items, sample_negatives(dataset, users, rng, seen_keys)


def train_epoch(
    params: ModelParams, dataset: Dataset, config: TrainConfig, rng: np.random.Generator, seen_keys=None, epoch=None
) -> float:
    """One sequential SGD pass over all training positives; returns mean loss."""
    users, pos, neg = epoch_triples(dataset, rng, seen_keys)
    total, bad = _kernels.bpr_epoch(params.P, params.Q, params.b, users, pos, neg, config.alpha, config.reg)
    if bad >= 0:
        raise DivergenceError("non-finite loss", epoch=epoch, step=int(bad), lam=config.lam)
    if not params.is_finite():
        raise DivergenceError("non-finite parameters", epoch=epoch, lam=config.lam)
    return total / max(len(users), 1)


def check_divergence(losses: list[float], epoch: int, lam: float) -> None:
    if not np.isfinite(losses[-1]) or losses[-1] > 10 * losses[0]:
        raise DivergenceError(f"epoch loss {losses[-1]:.4g} exceeds 10x initial {losses[0]:.4g}", epoch=epoch, lam=lam)


def train_bpr(
    dataset: Dataset,
    config: TrainConfig,
    on_epoch: Callable[[int, ModelParams, dict], None] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Plain BPR training. The rng stream is seeded from ``config.seed``."""
    params = init_params(dataset.n_users, dataset.n_items, config.k, config.seed, config.init_scale)
    rng = np.random.default_rng([config.seed, 1])
    seen = dataset.seen_keys()
    history, losses = [], []
    for epoch in range(1, config.epochs + 1):
        loss = train_epoch(params, dataset, config, rng, seen, epoch)
        losses.append(loss)
        check_divergence(losses, epoch, config.lam)
        row = {"epoch": epoch, "mean_loss": loss}
        history.append(row)
        log.debug("epoch %d loss %.5f", epoch, loss)
        if on_epoch is not None:
            on_epoch(epoch, params, row)
    return params, history


def score_users(params: ModelParams, users) -> np.ndarray:
    return params.P[users] @ params.Q.T + params.b


def recommend_topk(params: ModelParams, u: int, exclude, k: int) -> list[int]:
    """Top-``k`` items by score outside ``exclude``; ties go to the smaller index."""
    _check_index(u, params.n_users, "user")
    exclude = np.unique(np.asarray(list(exclude), dtype=np.int64))
    if k > params.n_items - len(exclude):
        raise ValueError(f"k={k} exceeds the {params.n_items - len(exclude)} available items")
    scores = score_users(params, [u])[0]
    scores[exclude] = -np.inf
    order = np.lexsort((np.arange(params.n_items), -scores))
    return order[:k].tolist()


def hit_rate_at_k(params: ModelParams, dataset: Dataset, k: int = 10, batch: int = 512) -> float:
    """Fraction of held-out items ranked in the top ``k`` among unseen items.

    Uses the same ordering as :func:`recommend_topk`: an item's rank is the
    number of candidates with a higher score plus those tied at a smaller index.
    """
    users = dataset.test_users()
    if len(users) == 0:
        raise ValueError("no users with a held-out item")
    hits = 0
    item_idx = np.arange(dataset.n_items)
    for start in range(0, len(users), batch):
        chunk = users[start:start + batch]
        scores = score_users(params, chunk)
        for row, u in enumerate(chunk):
            scores[row, dataset.train_positives[u]] = -np.inf
        test = dataset.test_item[chunk]
        target = scores[np.arange(len(chunk)), test][:, None]
        ahead = (scores > target) | ((scores == target) & (item_idx[None, :] < test[:, None]))
        hits += int(np.count_nonzero(ahead.sum(axis=1) < k))
    return hits / len(users)


def save_checkpoint(path, params: ModelParams, meta: dict, heads=None) -> None:
    doc = {"meta": meta, "P": params.P.tolist(), "Q": params.Q.tolist(), "b": params.b.tolist()}
    if heads is not None:
        doc["heads"] = [{"attribute": h.attribute, "W": h.W.tolist(), "c": h.c.tolist()} for h in heads]
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(params, meta, heads)``; heads is an empty list for plain checkpoints."""
    from .adversarial import AdversarialHead

    with open(path) as fh:
        doc = json.load(fh)
    params = ModelParams(np.array(doc["P"], dtype=float), np.array(doc["Q"], dtype=float), np.array(doc["b"], dtype=float))
    heads = [AdversarialHead(h["attribute"], np.array(h["W"], dtype=float), np.array(h["c"], dtype=float)) for h in doc.get("heads", [])]
    return params, doc["meta"], heads
