"""Report figures rendered to files (Agg backend, no display needed)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path, canonical: bool) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None} if canonical else None)
    plt.close(fig)
    return path


def _lambda_axis(ax, lams):
    ax.set_xscale("symlog", linthresh=min([x for x in lams if x > 0] or [0.01]))
    ax.set_xticks(lams)
    ax.set_xticklabels([f"{x:g}" for x in lams])
    ax.set_xlabel("λ")


def plot_sweep(cells: dict, majority: dict, path, canonical: bool = False) -> Path:
    """Three panels against λ: gender accuracy, age accuracy, hit rate, one line per size."""
    ks = sorted({k for k, _ in cells})
    lams = sorted({lam for _, lam in cells})
    panels = [("gender_best_acc", "gender: best attacker acc. (%)", majority.get("gender")),
              ("age_best_acc", "age: best attacker acc. (%)", majority.get("age")),
              ("hit_rate_10", "hit rate @10 (%)", None)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9.5, 2.8), constrained_layout=True)
        for ax, (metric, label, base) in zip(axes, panels):
            for k in ks:
                xs = [lam for lam in lams if (k, lam) in cells and not math.isnan(cells[(k, lam)][metric])]
                ys = [100 * cells[(k, lam)][metric] for lam in xs]
                ax.plot(xs, ys, marker="o", ms=3, label=f"size {k}")
            if base is not None:
                ax.axhline(100 * base, color="0.4", ls="--", lw=0.8, label="majority")
            _lambda_axis(ax, lams)
            ax.set_ylabel(label)
        axes[0].legend(frameon=False)
        return _save(fig, path, canonical)


def plot_tradeoff(pareto: dict, path, canonical: bool = False) -> Path:
    """Recommendation loss vs leakage, Pareto-optimal cells highlighted."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2), constrained_layout=True)
        pts = pareto["points"]
        ax.scatter([p["l"] for p in pts], [100 * p["h"] for p in pts], s=14, c="0.6", label="cell")
        front = sorted(pareto["front"], key=lambda p: (p["l"], p["h"]))
        ax.plot([p["l"] for p in front], [100 * p["h"] for p in front], "o-", ms=4, color="C3", label="Pareto front")
        for p in front:
            ax.annotate(f"λ={p['lambda']:g}, {p['k']}", (p["l"], 100 * p["h"]), fontsize=7,
                        xytext=(3, 3), textcoords="offset points")
        ax.set_xlabel("1 − hit rate @10")
        ax.set_ylabel("max leakage gap (pp)")
        ax.legend(frameon=False)
        return _save(fig, path, canonical)


def plot_training(history: list[dict], path, canonical: bool = False) -> Path:
    """Epoch loss and, when present, head training accuracy."""
    epochs = [r["epoch"] for r in history]
    acc_cols = [c for c in history[0] if c.endswith("_train_acc")] if history else []
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2 if acc_cols else 1, figsize=(7 if acc_cols else 3.6, 2.6),
                                 constrained_layout=True, squeeze=False)
        axes[0, 0].plot(epochs, [r["mean_loss"] for r in history], marker=".")
        axes[0, 0].set_xlabel("epoch")
        axes[0, 0].set_ylabel("mean BPR loss")
        for col in acc_cols:
            axes[0, 1].plot(epochs, [r[col] for r in history], label=col[len("head_"):-len("_train_acc")])
        if acc_cols:
            axes[0, 1].set_xlabel("epoch")
            axes[0, 1].set_ylabel("head training accuracy")
            axes[0, 1].legend(frameon=False)
        return _save(fig, path, canonical)
