"""Post-hoc leakage audit: attacker classifiers on frozen user factors."""

from __future__ import annotations

import csv
import dataclasses
import logging

import numpy as np
from scipy.optimize import minimize
from sklearn.neighbors import KNeighborsClassifier
from sklearn.tree import DecisionTreeClassifier

from .adversarial import AdversarialHead, head_forward

log = logging.getLogger(__name__)

DEFAULT_ATTACKERS = ("softmax", "knn", "tree")


def majority_baseline(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty labels")
    return float(np.bincount(labels).max() / labels.size)


def stratified_kfold(labels, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded per-class round-robin fold assignment.

    The round-robin counter carries over between classes, so fold sizes also
    differ by at most one.
    """
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < folds):
        small = classes[counts < folds].tolist()
        raise ValueError(f"classes {small} have fewer than {folds} members")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in classes:
        idx = rng.permutation(np.flatnonzero(labels == cls))
        assign[idx] = (offset + np.arange(len(idx))) % folds
        offset = (offset + len(idx)) % folds
    all_idx = np.arange(len(labels))
    return [(all_idx[assign != f], all_idx[assign == f]) for f in range(folds)]


class SoftmaxAttacker:
    """Multinomial logistic readout, same forward map as the training heads.

    Inputs are standardised with training statistics; the L2-penalised
    cross-entropy is minimised full-batch with L-BFGS until the gradient
    norm drops below ``tol``.
    """

    name = "softmax"

    def __init__(self, l2: float = 1e-4, tol: float = 1e-5, max_iter: int = 1000):
        self.l2, self.tol, self.max_iter = l2, tol, max_iter
        self.converged = False

    def _objective(self, theta, X, Y):
        n, k = X.shape
        C = Y.shape[1]
        W, c = theta[: k * C].reshape(k, C), theta[k * C:]
        logits = X @ W + c
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        prob = np.exp(logits - logz)
        loss = -np.sum(Y * (logits - logz)) / n + self.l2 * np.sum(W * W)
        E = (prob - Y) / n
        grad = np.concatenate([(X.T @ E + 2 * self.l2 * W).ravel(), E.sum(axis=0)])
        return loss, grad

    def fit(self, X, y, n_classes: int | None = None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        C = int(y.max()) + 1 if n_classes is None else n_classes
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        Xs = (X - self.mean_) / self.scale_
        Y = np.eye(C)[y]
        k = X.shape[1]
        res = minimize(
            self._objective, np.zeros(k * C + C), args=(Xs, Y), jac=True, method="L-BFGS-B",
            options={"maxiter": self.max_iter, "gtol": self.tol / 10, "ftol": 0.0},
        )
        self.grad_norm_ = float(np.linalg.norm(res.jac))
        self.converged = self.grad_norm_ < self.tol
        if not self.converged:
            log.warning("softmax attacker stopped at gradient norm %.2e", self.grad_norm_)
        self.head_ = AdversarialHead("attacker", res.x[: k * C].reshape(k, C).copy(), res.x[k * C:].copy())
        return self

    def predict_proba(self, X):
        return head_forward(self.head_, (np.asarray(X, dtype=float) - self.mean_) / self.scale_)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class KNNAttacker:
    """Majority vote over the ``k_neighbors`` nearest rows (Euclidean, raw coordinates)."""

    name = "knn"

    def __init__(self, k_neighbors: int = 15):
        if k_neighbors < 1 or k_neighbors % 2 == 0:
            raise ValueError(f"k_neighbors must be a positive odd number, got {k_neighbors}")
        self.k_neighbors = k_neighbors

    def fit(self, X, y, n_classes=None):
        if self.k_neighbors > len(X):
            raise ValueError(f"k_neighbors={self.k_neighbors} exceeds {len(X)} samples")
        self.model_ = KNeighborsClassifier(n_neighbors=self.k_neighbors, algorithm="brute").fit(X, y)
        return self

    def predict(self, X):
        return self.model_.predict(X)


class TreeAttacker:
    """Greedy Gini-impurity CART with a depth cap."""

    name = "tree"

    def __init__(self, max_depth: int = 8, seed: int = 0):
        if max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {max_depth}")
        self.max_depth, self.seed = max_depth, seed

    def fit(self, X, y, n_classes=None):
        self.model_ = DecisionTreeClassifier(criterion="gini", max_depth=self.max_depth, random_state=self.seed).fit(X, y)
        return self

    def predict(self, X):
        return self.model_.predict(X)


def train_softmax_attacker(embeddings, labels, l2: float = 1e-4, tol: float = 1e-5, max_iter: int = 1000) -> SoftmaxAttacker:
    return SoftmaxAttacker(l2, tol, max_iter).fit(embeddings, labels)


def train_knn_attacker(embeddings, labels, k_neighbors: int = 15) -> KNNAttacker:
    return KNNAttacker(k_neighbors).fit(embeddings, labels)


def train_tree_attacker(embeddings, labels, max_depth: int = 8, seed: int = 0) -> TreeAttacker:
    return TreeAttacker(max_depth, seed).fit(embeddings, labels)


def make_attacker(name: str, seed: int = 0):
    if name == "softmax":
        return SoftmaxAttacker()
    if name == "knn":
        return KNNAttacker()
    if name == "tree":
        return TreeAttacker(seed=seed)
    raise ValueError(f"unknown attacker {name!r}")


@dataclasses.dataclass
class AuditReport:
    attribute: str
    majority_baseline: float
    fold_accuracies: dict  # attacker -> list of per-fold accuracies

    @property
    def accuracies(self) -> dict[str, float]:
        return {name: float(np.mean(acc)) for name, acc in self.fold_accuracies.items()}

    @property
    def best_attacker(self) -> str:
        acc = self.accuracies
        return max(acc, key=acc.get)

    @property
    def best_accuracy(self) -> float:
        return self.accuracies[self.best_attacker]

    @property
    def leakage_gap(self) -> float:
        return max(0.0, self.best_accuracy - self.majority_baseline)


def _job_seed(seed: int, *job) -> int:
    return int(np.random.SeedSequence([seed, *job]).generate_state(1)[0])


def audit_embeddings(
    embeddings,
    demographics: dict[str, np.ndarray],
    attackers=DEFAULT_ATTACKERS,
    folds: int = 5,
    seed: int = 0,
) -> dict[str, AuditReport]:
    """Cross-validated attacker accuracy for every attribute in ``demographics``.

    Each (attribute, attacker, fold) job gets its own seed, so results do not
    depend on evaluation order.
    """
    X = np.asarray(embeddings, dtype=float)
    reports = {}
    for a_idx, (attr, labels) in enumerate(sorted(demographics.items())):
        labels = np.asarray(labels)
        if len(labels) != len(X):
            raise ValueError(f"{len(X)} embeddings but {len(labels)} {attr} labels")
        n_classes = int(labels.max()) + 1
        splits = stratified_kfold(labels, folds, _job_seed(seed, a_idx))
        fold_acc = {}
        for m_idx, name in enumerate(attackers):
            accs = []
            for f, (train, test) in enumerate(splits):
                clf = make_attacker(name, seed=_job_seed(seed, a_idx, m_idx, f))
                clf.fit(X[train], labels[train], n_classes)
                accs.append(float(np.mean(clf.predict(X[test]) == labels[test])))
            fold_acc[name] = accs
        reports[attr] = AuditReport(attr, majority_baseline(labels), fold_acc)
    return reports


def write_fold_csv(path, reports: dict[str, AuditReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "attacker", "fold", "accuracy"])
        for attr, rep in reports.items():
            for name, accs in rep.fold_accuracies.items():
                for f, acc in enumerate(accs):
                    w.writerow([attr, name, f, f"{acc:.6f}"])


def write_summary_csv(path, reports: dict[str, AuditReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attribute", "majority", "best_attacker", "best_accuracy", "leakage_gap"])
        for attr, rep in reports.items():
            w.writerow([attr, f"{rep.majority_baseline:.6f}", rep.best_attacker, f"{rep.best_accuracy:.6f}", f"{rep.leakage_gap:.6f}"])


def format_table(reports: dict[str, AuditReport]) -> str:
    """Plain-text table: one row per attacker, one column per attribute (percent)."""
    attrs = list(reports)
    names = list(next(iter(reports.values())).fold_accuracies) if reports else []
    width = max([len("large class baseline")] + [len(n) for n in names])
    lines = [f"{'classifier':<{width}}  " + "  ".join(f"{a:>8}" for a in attrs)]
    lines.append("-" * len(lines[0]))
    lines.append(f"{'large class baseline':<{width}}  " + "  ".join(f"{100 * reports[a].majority_baseline:8.2f}" for a in attrs))
    for n in names:
        lines.append(f"{n:<{width}}  " + "  ".join(f"{100 * reports[a].accuracies[n]:8.2f}" for a in attrs))
    lines.append(f"{'leakage gap':<{width}}  " + "  ".join(f"{100 * reports[a].leakage_gap:8.2f}" for a in attrs))
    return "\n".join(lines) + "\n"
