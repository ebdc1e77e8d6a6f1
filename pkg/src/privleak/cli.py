"""Command line entry point: ``privleak <command> [options]``.

Exit codes: 0 success, 1 divergence or theorem counterexample, 2 input or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

from . import audit, experiment, infotheory, plotting
from .data import ATTRIBUTES, class_balance, load_movielens, write_dump
from .experiment import ExperimentConfig
from .model import ConfigError, DivergenceError, hit_rate_at_k, load_checkpoint, save_checkpoint

log = logging.getLogger("privleak")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its fields")
    p.add_argument("--data-dir", help="directory holding ratings.dat and users.dat (default: $PRIVLEAK_DATA_DIR)")
    p.add_argument("--out", dest="out_dir", help="output directory (default: out)")
    p.add_argument("--canonical", action="store_true", default=None, help="omit timestamps and host info from outputs")
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, help="adversarial rate; 0 trains plain BPR")
    p.add_argument("--k", type=int, help="factor dimension")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float, help="learning rate")
    p.add_argument("--reg", type=float, help="L2 coefficient")
    p.add_argument("--head-alpha", type=float, help="head learning rate (default: alpha)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privleak", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse MovieLens files, split, write the normalized dump")
    _common(p)

    p = sub.add_parser("train", help="train one (lambda, k, seed) model")
    _common(p)
    _training(p)
    p.add_argument("--eval-every", type=int, help="compute hit rate@10 every N epochs (0: never)")

    p = sub.add_parser("audit", help="post-hoc leakage audit of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", dest="audit_seed", type=int, help="fold/attacker seed")

    p = sub.add_parser("sweep", help="train and audit every lambda x k x seed cell")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--lambdas", dest="lambda_grid", type=lambda s: [float(x) for x in s.split(",")], help="comma list")
    p.add_argument("--ks", dest="k_grid", type=lambda s: [int(x) for x in s.split(",")], help="comma list")
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], help="comma list")
    p.add_argument("--no-checkpoints", action="store_true")

    p = sub.add_parser("verify-theory", help="randomised brute-force check of the leakage theorems")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_dir", help="write verify_theory.json and theory_sweeps.csv here")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("report", help="re-render tables, Pareto report and figures from results.csv")
    _common(p)
    return parser


CONFIG_KEYS = {f for f in ExperimentConfig.__dataclass_fields__}


def load_config(args) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS and v is not None}
    try:
        if args.config is not None:
            if not args.config.is_file():
                raise InputError(f"config file not found: {args.config}")
            return ExperimentConfig.from_file(args.config, **overrides)
        return ExperimentConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _load_dataset(cfg: ExperimentConfig):
    data_dir = cfg.resolved_data_dir()
    try:
        return load_movielens(data_dir)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None


def _out(cfg: ExperimentConfig, *parts) -> Path:
    path = Path(cfg.out_dir, *parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(cfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    if cfg.canonical:
        return
    doc = {"command": command, "config": cfg.to_json(), "host": platform.node(),
           "python": platform.python_version(), "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    doc.update(extra or {})
    _out(cfg, f"manifest_{command}.json").write_text(json.dumps(doc, indent=2) + "\n")


def cmd_prepare(args) -> int:
    cfg = load_config(args)
    ds = _load_dataset(cfg)
    dump = _out(cfg, "dataset.csv")
    write_dump(ds, dump)
    summary = {
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "n_interactions": ds.n_train + len(ds.test_users()),
        "n_train": ds.n_train,
        "n_test_users": int(len(ds.test_users())),
        "majority": {a: audit.majority_baseline(ds.demographics[a]) for a in ATTRIBUTES},
        "class_balance": {a: [round(float(x), 6) for x in class_balance(ds.demographics[a], n)] for a, n in ATTRIBUTES.items()},
    }
    _out(cfg, "dataset_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"users {summary['n_users']}  items {summary['n_items']}  interactions {summary['n_interactions']}  "
          f"test users {summary['n_test_users']}")
    for a, m in summary["majority"].items():
        print(f"{a:<7} majority {100 * m:.1f}%  balance {summary['class_balance'][a]}")
    print(f"wrote {dump}")
    _write_manifest(cfg, "prepare")
    return EXIT_OK


def _epoch_logger(cfg, ds, rows):
    def on_epoch(epoch, params, row):
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            row["hit_rate_at_10"] = hit_rate_at_k(params, ds, 10)
        rows.append(row)
        log.info("epoch %d loss %.5f", epoch, row["mean_loss"])
    return on_epoch


def _write_epoch_csv(path, rows):
    heads = [c for c in (rows[0] if rows else {}) if c.startswith("head_") and c.endswith("_train_acc")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "hit_rate_at_10"] + heads)
        for r in rows:
            hr = r.get("hit_rate_at_10")
            w.writerow([r["epoch"], f"{r['mean_loss']:.8f}", "" if hr is None else f"{hr:.6f}"] + [f"{r[h]:.6f}" for h in heads])


def cmd_train(args) -> int:
    cfg = load_config(args)
    ds = _load_dataset(cfg)
    name = experiment.cell_name(cfg.lam, cfg.k, cfg.seed)
    rows: list[dict] = []
    try:
        params, heads, _ = experiment.train_model(ds, cfg, cfg.lam, cfg.k, cfg.seed, _epoch_logger(cfg, ds, rows))
    except DivergenceError as exc:
        _write_epoch_csv(_out(cfg, "logs", f"{name}_epochs.csv"), rows)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    hr = hit_rate_at_k(params, ds, 10)
    meta = {"k": cfg.k, "n_users": ds.n_users, "n_items": ds.n_items, "seed": cfg.seed, "lambda": cfg.lam,
            "config": cfg.train_config().__dict__, "head_alpha": cfg.head_alpha, "hit_rate_10": hr}
    ckpt = _out(cfg, "checkpoints", f"{name}.json")
    save_checkpoint(ckpt, params, meta, heads or None)
    _write_epoch_csv(_out(cfg, "logs", f"{name}_epochs.csv"), rows)
    plotting.plot_training(rows, _out(cfg, "figures", f"{name}_training.png"), cfg.canonical)
    print(f"hit_rate@10 {hr:.4f}")
    print(f"wrote {ckpt}")
    _write_manifest(cfg, "train", {"checkpoint": str(ckpt)})
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = load_config(args)
    if not args.checkpoint.is_file():
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    params, meta, _ = load_checkpoint(args.checkpoint)
    ds = _load_dataset(cfg)
    if params.n_users != ds.n_users:
        raise InputError(f"checkpoint has {params.n_users} users but the dataset has {ds.n_users}")
    reports = audit.audit_embeddings(params.P, ds.demographics, cfg.attackers, cfg.folds, cfg.audit_seed)
    stem = args.checkpoint.stem
    audit.write_fold_csv(_out(cfg, "audit", f"{stem}_folds.csv"), reports)
    audit.write_summary_csv(_out(cfg, "audit", f"{stem}_summary.csv"), reports)
    table = audit.format_table(reports)
    _out(cfg, "audit", f"{stem}_table.txt").write_text(table)
    print(table, end="")
    _write_manifest(cfg, "audit", {"checkpoint": str(args.checkpoint)})
    return EXIT_OK


def render_report(cfg: ExperimentConfig, majority: dict | None = None) -> dict:
    results = Path(cfg.out_dir, "results.csv")
    if not results.is_file():
        raise InputError(f"no results at {results}; run the sweep first")
    records = experiment.read_results(results)
    majority_path = Path(cfg.out_dir, "majority.json")
    if majority is None and majority_path.is_file():
        majority = json.loads(majority_path.read_text())
    cells = experiment.aggregate(records)
    _out(cfg, "tables.md").write_text(experiment.format_tables(cells, majority))
    pareto = experiment.pareto_report(cells)
    _out(cfg, "pareto.json").write_text(json.dumps(pareto, indent=2) + "\n")
    plotting.plot_sweep(cells, majority or {}, _out(cfg, "figures", "sweep.png"), cfg.canonical)
    if pareto["points"]:
        plotting.plot_tradeoff(pareto, _out(cfg, "figures", "tradeoff.png"), cfg.canonical)
    return pareto


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    ds = _load_dataset(cfg)
    ckpt_dir = None
    if not args.no_checkpoints:
        ckpt_dir = Path(cfg.out_dir, "checkpoints")
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        state = "diverged" if rec.diverged else f"hr {rec.hit_rate_10:.4f} gender {rec.gender_best_acc:.4f} age {rec.age_best_acc:.4f}"
        print(f"{experiment.cell_name(rec.lam, rec.k, rec.seed)}: {state}", flush=True)

    records = experiment.run_sweep(ds, cfg, ckpt_dir, progress)
    experiment.write_results(_out(cfg, "results.csv"), records)
    majority = experiment.majority_from_dataset(ds)
    _out(cfg, "majority.json").write_text(json.dumps(majority, indent=2, sort_keys=True) + "\n")
    pareto = render_report(cfg, majority)
    print(f"{len(records)} records, {sum(r.diverged for r in records)} diverged, {len(pareto['front'])} Pareto cells")
    _write_manifest(cfg, "sweep")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args)
    render_report(cfg)
    print(Path(cfg.out_dir, "tables.md").read_text(), end="")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    if args.trials < 1:
        raise InputError("trials must be positive")
    summary = infotheory.verify_theory(args.trials, args.seed)
    failed = (summary["theorem1"]["counterexamples"] + summary["dpi"]["counterexamples"]
              + summary["mi_bounds"]["violations"] + (summary["chain_rule"]["max_abs_error"] > 1e-10))
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    rows = [("theorem1", summary["theorem1"]["trials"], summary["theorem1"]["counterexamples"]),
            ("dpi", summary["dpi"]["trials"], summary["dpi"]["counterexamples"]),
            ("chain_rule", summary["chain_rule"]["trials"], int(summary["chain_rule"]["max_abs_error"] > 1e-10)),
            ("mi_bounds", summary["mi_bounds"]["trials"], summary["mi_bounds"]["violations"])]
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_theory.json").write_text(text)
        with open(out / "theory_sweeps.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep", "trials", "counterexamples"])
            w.writerows(rows)
    for name, trials, bad in rows:
        print(f"{name:<11} trials {trials:>6}  counterexamples {bad}")
    print(f"theorem premise held in {summary['theorem1']['premise_true']} trials; "
          f"chain-rule max error {summary['chain_rule']['max_abs_error']:.2e}")
    if failed:
        print(text, file=sys.stderr, end="")
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "audit": cmd_audit,
    "sweep": cmd_sweep,
    "verify-theory": cmd_verify_theory,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
