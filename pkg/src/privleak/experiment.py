"""Experiment configuration, single-cell runs and the lambda x k sweep."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import adversarial, audit, infotheory
from .data import ATTRIBUTES, Dataset, load_movielens
from .model import ConfigError, DivergenceError, TrainConfig, hit_rate_at_k, save_checkpoint, train_bpr

log = logging.getLogger(__name__)

DATA_ENV = "PRIVLEAK_DATA_DIR"
RESULT_FIELDS = ["lambda", "k", "seed", "hit_rate_10", "gender_best_acc", "gender_gap", "age_best_acc", "age_gap", "diverged"]


@dataclasses.dataclass
class ExperimentConfig:
    data_dir: str | None = None
    out_dir: str = "out"
    k: int = 10
    alpha: float = 0.05
    reg: float = 0.01
    epochs: int = 30
    seed: int = 0
    lam: float = 0.0
    init_scale: float = 0.1
    head_alpha: float | None = None
    heads: list = dataclasses.field(default_factory=lambda: ["gender", "age"])
    lambda_grid: list = dataclasses.field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0, 10.0])
    k_grid: list = dataclasses.field(default_factory=lambda: [10, 20, 50])
    seeds: list = dataclasses.field(default_factory=lambda: [0, 1, 2])
    attackers: list = dataclasses.field(default_factory=lambda: list(audit.DEFAULT_ATTACKERS))
    folds: int = 5
    audit_seed: int = 0
    eval_every: int = 0
    workers: int = 1
    canonical: bool = False

    def __post_init__(self):
        if not self.lambda_grid or not self.k_grid or not self.seeds:
            raise ConfigError("lambda_grid, k_grid and seeds must be non-empty")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.attackers) - set(audit.DEFAULT_ATTACKERS)
        if unknown:
            raise ConfigError(f"unknown attackers: {sorted(unknown)}")
        self.train_config()  # validates the shared training fields
        self.adv_config()

    @classmethod
    def from_file(cls, path, **overrides) -> ExperimentConfig:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def resolved_data_dir(self) -> Path:
        d = self.data_dir or os.environ.get(DATA_ENV)
        if not d:
            raise ConfigError(f"no data directory: pass --data-dir, set data_dir in the config, or set {DATA_ENV}")
        return Path(d)

    def train_config(self, **changes) -> TrainConfig:
        fields = dict(k=self.k, alpha=self.alpha, reg=self.reg, epochs=self.epochs, seed=self.seed, lam=self.lam, init_scale=self.init_scale)
        fields.update(changes)
        return TrainConfig(**fields)

    def adv_config(self, lam: float | None = None) -> adversarial.AdvConfig:
        return adversarial.AdvConfig(lam=self.lam if lam is None else lam, head_alpha=self.head_alpha, heads=tuple(self.heads))

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class ExperimentRecord:
    lam: float
    k: int
    seed: int
    hit_rate_10: float = math.nan
    gender_best_acc: float = math.nan
    gender_gap: float = math.nan
    age_best_acc: float = math.nan
    age_gap: float = math.nan
    diverged: bool = False

    @property
    def key(self):
        return (self.k, self.lam, self.seed)

    def row(self) -> list[str]:
        def num(x):
            return "nan" if math.isnan(x) else f"{x:.6f}"

        return [f"{self.lam:g}", str(self.k), str(self.seed), num(self.hit_rate_10), num(self.gender_best_acc),
                num(self.gender_gap), num(self.age_best_acc), num(self.age_gap), str(int(self.diverged))]

    @classmethod
    def from_row(cls, row: dict) -> ExperimentRecord:
        return cls(
            lam=float(row["lambda"]), k=int(row["k"]), seed=int(row["seed"]),
            hit_rate_10=float(row["hit_rate_10"]), gender_best_acc=float(row["gender_best_acc"]),
            gender_gap=float(row["gender_gap"]), age_best_acc=float(row["age_best_acc"]),
            age_gap=float(row["age_gap"]), diverged=bool(int(row["diverged"])),
        )


def cell_name(lam: float, k: int, seed: int) -> str:
    return f"k{k}_lam{lam:g}_seed{seed}"


def train_model(dataset: Dataset, cfg: ExperimentConfig, lam: float, k: int, seed: int, on_epoch=None):
    """Train one configuration; ``lam == 0`` uses the plain BPR trainer. Returns (params, heads, history)."""
    tc = cfg.train_config(k=k, seed=seed, lam=lam)
    if lam == 0:
        params, history = train_bpr(dataset, tc, on_epoch)
        return params, [], history
    return adversarial.train_privacy_adversarial(dataset, tc, cfg.adv_config(lam), on_epoch)


def run_cell(dataset: Dataset, cfg: ExperimentConfig, lam: float, k: int, seed: int, checkpoint_dir=None) -> ExperimentRecord:
    rec = ExperimentRecord(lam=lam, k=k, seed=seed)
    try:
        params, heads, _ = train_model(dataset, cfg, lam, k, seed)
    except DivergenceError as exc:
        log.warning("cell %s diverged: %s", cell_name(lam, k, seed), exc)
        rec.diverged = True
        return rec
    rec.hit_rate_10 = hit_rate_at_k(params, dataset, 10)
    reports = audit.audit_embeddings(params.P, dataset.demographics, cfg.attackers, cfg.folds, cfg.audit_seed)
    rec.gender_best_acc, rec.gender_gap = reports["gender"].best_accuracy, reports["gender"].leakage_gap
    rec.age_best_acc, rec.age_gap = reports["age"].best_accuracy, reports["age"].leakage_gap
    if checkpoint_dir is not None:
        meta = {"k": k, "n_users": dataset.n_users, "n_items": dataset.n_items, "seed": seed, "lambda": lam,
                "config": cfg.train_config(k=k, seed=seed, lam=lam).__dict__, "hit_rate_10": rec.hit_rate_10}
        save_checkpoint(Path(checkpoint_dir) / f"{cell_name(lam, k, seed)}.json", params, meta, heads or None)
    return rec


_WORKER_DATASET: Dataset | None = None


def _init_worker(data_dir):
    global _WORKER_DATASET
    _WORKER_DATASET = load_movielens(data_dir)


def _run_in_worker(args):
    cfg, lam, k, seed, ckpt = args
    return run_cell(_WORKER_DATASET, cfg, lam, k, seed, ckpt)


def run_sweep(dataset: Dataset, cfg: ExperimentConfig, checkpoint_dir=None, progress=None) -> list[ExperimentRecord]:
    """Every (lambda, k, seed) cell; records come back sorted by (k, lambda, seed)."""
    cells = list(itertools.product(cfg.lambda_grid, cfg.k_grid, cfg.seeds))
    if cfg.workers > 1:
        jobs = [(cfg, float(lam), int(k), int(s), checkpoint_dir) for lam, k, s in cells]
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(str(cfg.resolved_data_dir()),)) as pool:
            records = list(pool.map(_run_in_worker, jobs))
    else:
        records = []
        for lam, k, s in cells:
            records.append(run_cell(dataset, cfg, float(lam), int(k), int(s), checkpoint_dir))
            if progress is not None:
                progress(records[-1])
    return sorted(records, key=lambda r: r.key)


def write_results(path, records: list[ExperimentRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for rec in sorted(records, key=lambda r: r.key):
            w.writerow(rec.row())


def read_results(path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        return [ExperimentRecord.from_row(row) for row in csv.DictReader(fh)]


METRICS = ("hit_rate_10", "gender_best_acc", "gender_gap", "age_best_acc", "age_gap")


def aggregate(records: list[ExperimentRecord]) -> dict[tuple[int, float], dict]:
    """Mean of each metric over the non-diverged seeds of every (k, lambda) cell."""
    cells: dict[tuple[int, float], list[ExperimentRecord]] = {}
    for rec in records:
        cells.setdefault((rec.k, rec.lam), []).append(rec)
    out = {}
    for key in sorted(cells):
        recs = cells[key]
        ok = [r for r in recs if not r.diverged]
        row = {"n_seeds": len(recs), "n_diverged": len(recs) - len(ok)}
        for m in METRICS:
            row[m] = float(np.mean([getattr(r, m) for r in ok])) if ok else math.nan
        out[key] = row
    return out


def tradeoff_points(cells: dict) -> list[infotheory.TradeoffPoint]:
    pts = []
    for (k, lam), row in cells.items():
        if math.isnan(row["hit_rate_10"]):
            continue
        pts.append(infotheory.TradeoffPoint(1.0 - row["hit_rate_10"], max(row["gender_gap"], row["age_gap"]), (lam, k)))
    return pts


def pareto_report(cells: dict) -> dict:
    pts = tradeoff_points(cells)
    front = infotheory.pareto_front(pts) if pts else []
    on_front = {p.tag for p in front}

    def enc(p):
        return {"lambda": p.tag[0], "k": p.tag[1], "l": p.l, "h": p.h, "pareto": p.tag in on_front}

    return {
        "objective": {"l": "1 - hit_rate@10 (mean over seeds)", "h": "max over attributes of leakage gap"},
        "points": [enc(p) for p in pts],
        "front": [enc(p) for p in front],
    }


def format_tables(cells: dict, majority: dict[str, float] | None = None) -> str:
    """Markdown tables (percent) shaped as size rows x lambda columns."""
    ks = sorted({k for k, _ in cells})
    lams = sorted({lam for _, lam in cells})

    def table(title, metric, baseline=None):
        lines = [f"### {title}", "", "| size / λ | " + " | ".join(f"{lam:g}" for lam in lams) + " |",
                 "|---|" + "---|" * len(lams)]
        for k in ks:
            vals = []
            for lam in lams:
                row = cells.get((k, lam))
                if row is None:
                    vals.append("")
                elif math.isnan(row[metric]):
                    vals.append("diverged")
                else:
                    mark = "†" if row["n_diverged"] else ""
                    vals.append(f"{100 * row[metric]:.2f}{mark}")
            lines.append(f"| {k} | " + " | ".join(vals) + " |")
        if baseline is not None:
            lines.append("| naive | " + " | ".join(f"{100 * baseline:.2f}" for _ in lams) + " |")
        return "\n".join(lines)

    majority = majority or {}
    parts = [
        table("Gender prediction from user factors (best attacker accuracy, %)", "gender_best_acc", majority.get("gender")),
        table("Age prediction from user factors (best attacker accuracy, %)", "age_best_acc", majority.get("age")),
        table("Recommendation accuracy (hit rate @10, %)", "hit_rate_10"),
        "† at least one seed diverged; the mean covers the remaining seeds.",
    ]
    return "\n\n".join(parts) + "\n"


def majority_from_dataset(dataset: Dataset) -> dict[str, float]:
    return {a: audit.majority_baseline(dataset.demographics[a]) for a in ATTRIBUTES}
