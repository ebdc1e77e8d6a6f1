"""Discrete plug-in information measures, brute-force checks of the leakage
theorems, and the privacy/performance Pareto front.

All quantities are in bits. Variables of a :class:`DiscreteJoint` are
addressed by axis number; wherever a single variable is accepted a tuple of
axes can be passed to treat them as one compound variable.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

NORM_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class DiscreteJoint:
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if np.any(t < 0):
            raise ValueError("negative probability mass")
        if abs(t.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"joint sums to {t.sum()!r}, not 1")
        object.__setattr__(self, "table", t)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.table.shape

    def marginal(self, axes) -> np.ndarray:
        axes = _axes(axes)
        if len(set(axes)) != len(axes) or any(not 0 <= a < self.table.ndim for a in axes):
            raise ValueError(f"bad variable selection {axes} for {self.table.ndim} variables")
        drop = tuple(a for a in range(self.table.ndim) if a not in axes)
        m = self.table.sum(axis=drop)
        # sum() leaves the kept axes in ascending order; restore the requested order
        return np.transpose(m, np.argsort(np.argsort(axes)))

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "table": self.table.ravel().tolist()}


def _axes(v) -> tuple[int, ...]:
    return (v,) if np.isscalar(v) else tuple(v)


def entropy(p) -> float:
    """Shannon entropy of a probability table of any shape (0 log 0 = 0)."""
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"not a distribution (sum={p.sum()!r})")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def joint_entropy(joint: DiscreteJoint, *variables) -> float:
    axes = sorted({a for v in variables for a in _axes(v)})
    return entropy(joint.marginal(tuple(axes))) if axes else 0.0


def conditional_entropy(joint: DiscreteJoint, target, given) -> float:
    """H[target | given]."""
    _disjoint(target, given)
    return joint_entropy(joint, target, given) - joint_entropy(joint, given)


def mutual_information(joint: DiscreteJoint, a, b) -> float:
    """I(a; b)."""
    _disjoint(a, b)
    return joint_entropy(joint, a) + joint_entropy(joint, b) - joint_entropy(joint, a, b)


def conditional_mutual_information(joint: DiscreteJoint, a, b, given) -> float:
    """I(a; b | given)."""
    _disjoint(a, b, given)
    return (
        joint_entropy(joint, a, given)
        + joint_entropy(joint, b, given)
        - joint_entropy(joint, a, b, given)
        - joint_entropy(joint, given)
    )


def _disjoint(*variables) -> None:
    seen = [a for v in variables for a in _axes(v)]
    if len(seen) != len(set(seen)):
        raise ValueError(f"variables overlap: {variables}")


@dataclasses.dataclass
class Theorem1Verdict:
    """Outcome of checking  I(v; v_hat) > H[v|d]  =>  I(v_hat; d) > 0."""

    mi_v_vhat: float
    h_v_given_d: float
    mi_vhat_d: float

    @property
    def premise_holds(self) -> bool:
        return self.mi_v_vhat > self.h_v_given_d

    @property
    def conclusion_holds(self) -> bool:
        return self.mi_vhat_d > 0

    @property
    def counterexample(self) -> bool:
        return self.premise_holds and not self.conclusion_holds

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out.update(premise_holds=self.premise_holds, conclusion_holds=self.conclusion_holds)
        return out


def check_theorem1(joint: DiscreteJoint, v: int = 0, vhat: int = 1, d: int = 2) -> Theorem1Verdict:
    return Theorem1Verdict(
        mi_v_vhat=mutual_information(joint, v, vhat),
        h_v_given_d=conditional_entropy(joint, v, d),
        mi_vhat_d=mutual_information(joint, vhat, d),
    )


@dataclasses.dataclass
class DPIVerdict:
    mi_x_d: float
    mi_gx_d: float
    tol: float = 1e-10

    @property
    def holds(self) -> bool:
        return self.mi_gx_d <= self.mi_x_d + self.tol

    def to_json(self) -> dict:
        return {"mi_x_d": self.mi_x_d, "mi_gx_d": self.mi_gx_d, "holds": self.holds}


def pushforward(joint: DiscreteJoint, var: int, g) -> DiscreteJoint:
    """Joint with variable ``var`` replaced by ``g[var]`` (g is an index map)."""
    g = np.asarray(g, dtype=np.int64)
    if g.shape != (joint.dims[var],) or np.any(g < 0):
        raise ValueError("g must map every symbol of the variable to a non-negative index")
    moved = np.moveaxis(joint.table, var, 0)
    out = np.zeros((int(g.max()) + 1,) + moved.shape[1:])
    np.add.at(out, g, moved)
    return DiscreteJoint(np.moveaxis(out, 0, var))


def check_dpi(joint: DiscreteJoint, g, x: int = 0, d: int = 1) -> DPIVerdict:
    """I(g(x); d) <= I(x; d) for a deterministic map ``g`` of ``x``'s alphabet."""
    return DPIVerdict(mutual_information(joint, x, d), mutual_information(pushforward(joint, x, g), x, d))


def random_joint(rng: np.random.Generator, n_vars: int, max_alphabet: int) -> DiscreteJoint:
    """Dirichlet-random joint; a small concentration often makes it near-deterministic."""
    dims = tuple(int(x) for x in rng.integers(2, max_alphabet + 1, size=n_vars))
    conc = rng.choice([0.05, 0.2, 1.0])
    table = rng.dirichlet(np.full(int(np.prod(dims)), conc))
    table /= table.sum()
    return DiscreteJoint(table.reshape(dims))


def correlated_triple(rng: np.random.Generator, max_alphabet: int) -> DiscreteJoint:
    """(v, v_hat, d) where v is driven by d and v_hat is a noisy copy of v.

    These joints satisfy the theorem's premise far more often than plain
    Dirichlet draws, so the sweep is not vacuous.
    """
    n = int(rng.integers(2, max_alphabet + 1))
    n_d = int(rng.integers(2, max_alphabet + 1))
    p_d = rng.dirichlet(np.ones(n_d))
    p_v_d = rng.dirichlet(np.full(n, 0.1), size=n_d)  # rows: d
    noise = rng.uniform(0, 0.3)
    p_vhat_v = (1 - noise) * np.eye(n) + noise * rng.dirichlet(np.ones(n), size=n)
    table = np.einsum("d,dv,vw->vwd", p_d, p_v_d, p_vhat_v)
    return DiscreteJoint(table / table.sum())


def verify_theory(trials: int, seed: int, max_alphabet: int = 4, dpi_max_alphabet: int = 6) -> dict:
    """Randomised brute-force sweeps over small discrete systems.

    Returns a summary with counts and up to five offending joints per sweep.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    thm = {"trials": trials, "premise_true": 0, "counterexamples": 0, "examples": []}
    dpi = {"trials": trials, "counterexamples": 0, "examples": []}
    chain = {"trials": trials, "max_abs_error": 0.0}
    bounds = {"trials": trials, "violations": 0}
    for t in range(trials):
        joint = correlated_triple(rng, max_alphabet) if t % 2 else random_joint(rng, 3, max_alphabet)
        verdict = check_theorem1(joint)
        thm["premise_true"] += verdict.premise_holds
        if verdict.counterexample:
            thm["counterexamples"] += 1
            if len(thm["examples"]) < 5:
                thm["examples"].append({"joint": joint.to_json(), **verdict.to_json()})

        # I(v; d, v_hat) = I(v; d) + I(v; v_hat | d)
        lhs = mutual_information(joint, 0, (1, 2))
        rhs = mutual_information(joint, 0, 2) + conditional_mutual_information(joint, 0, 1, 2)
        chain["max_abs_error"] = max(chain["max_abs_error"], abs(lhs - rhs))
        mi = mutual_information(joint, 0, 1)
        if not -1e-10 <= mi <= min(joint_entropy(joint, 0), joint_entropy(joint, 1)) + 1e-10:
            bounds["violations"] += 1

        xd = random_joint(rng, 2, dpi_max_alphabet)
        g = rng.integers(0, int(rng.integers(1, dpi_max_alphabet + 1)), size=xd.dims[0])
        dv = check_dpi(xd, g)
        if not dv.holds:
            dpi["counterexamples"] += 1
            if len(dpi["examples"]) < 5:
                dpi["examples"].append({"joint": xd.to_json(), "g": g.tolist(), **dv.to_json()})
    return {"seed": seed, "theorem1": thm, "dpi": dpi, "chain_rule": chain, "mi_bounds": bounds}


def quantile_bins(values: np.ndarray, n_bins: int) -> np.ndarray:
    edges = np.unique(np.quantile(values, np.linspace(0, 1, n_bins + 1)[1:-1]))
    return np.searchsorted(edges, values, side="right")


def empirical_mi(x: np.ndarray, y: np.ndarray) -> float:
    """Plug-in I(x; y) in bits from paired non-negative integer samples."""
    x, y = np.asarray(x), np.asarray(y)
    counts = np.zeros((x.max() + 1, y.max() + 1))
    np.add.at(counts, (x, y), 1)
    return max(0.0, mutual_information(DiscreteJoint(counts / counts.sum()), 0, 1))


def estimate_embedding_leakage_mi(embeddings, labels, n_bins: int = 8) -> tuple[float, np.ndarray]:
    """Max over coordinates of the quantile-binned plug-in I(coordinate; label).

    Biased upwards for finite samples; compare against a permutation null,
    not against zero.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    X = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    per = np.array([empirical_mi(quantile_bins(X[:, f], n_bins), labels) for f in range(X.shape[1])])
    return float(per.max()), per


@dataclasses.dataclass(frozen=True)
class TradeoffPoint:
    l: float  # recommendation loss, 1 - hit rate
    h: float  # privacy target, worst leakage gap
    tag: tuple = ()

    def __post_init__(self):
        if not 0 <= self.l <= 1:
            raise ValueError(f"l must lie in [0, 1], got {self.l}")
        if self.h < 0:
            raise ValueError(f"h must be >= 0, got {self.h}")


def dominates(a: TradeoffPoint, b: TradeoffPoint) -> bool:
    return a.l <= b.l and a.h <= b.h and (a.l < b.l or a.h < b.h)


def pareto_front(points: Sequence[TradeoffPoint]) -> list[TradeoffPoint]:
    """Points not strictly dominated by any other, in input order.

    Sweeps groups of equal ``l`` in ascending order while tracking the best
    ``h`` seen at strictly smaller ``l``; identical points do not dominate
    each other.
    """
    if not points:
        raise ValueError("no points")
    order = sorted(range(len(points)), key=lambda n: (points[n].l, points[n].h))
    keep = [False] * len(points)
    best_h = np.inf
    start = 0
    while start < len(order):
        end = start
        while end < len(order) and points[order[end]].l == points[order[start]].l:
            end += 1
        group_min = points[order[start]].h
        for n in order[start:end]:
            p = points[n]
            keep[n] = best_h > p.h and not group_min < p.h
        best_h = min(best_h, group_min)
        start = end
    return [p for p, k in zip(points, keep) if k]
