import csv
import json
import math

import numpy as np
import pytest

from privleak import cli, experiment, infotheory
from privleak.experiment import ExperimentConfig, ExperimentRecord
from privleak.model import ConfigError

SWEEP_ARGS = ["--lambdas", "0,0.1,1000", "--ks", "4,8", "--seeds", "0,1", "--epochs", "3", "--canonical"]


def test_config_defaults_and_precedence(tmp_path):
    cfg = ExperimentConfig()
    assert (cfg.k, cfg.alpha, cfg.reg, cfg.epochs, cfg.init_scale) == (10, 0.05, 0.01, 30, 0.1)
    assert cfg.lambda_grid == [0.0, 0.01, 0.1, 1.0, 10.0] and cfg.k_grid == [10, 20, 50]
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"k": 20, "lambda": 0.5, "epochs": 7}))
    from_file = ExperimentConfig.from_file(path)
    assert (from_file.k, from_file.lam, from_file.epochs) == (20, 0.5, 7)
    flags = ExperimentConfig.from_file(path, k=30, epochs=None)
    assert (flags.k, flags.epochs) == (30, 7)


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"k": 0}, {"folds": 1}, {"attackers": ["svm"]}, {"lambda_grid": []}])
def test_config_rejects(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_data_dir_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv(experiment.DATA_ENV, str(tmp_path))
    assert ExperimentConfig().resolved_data_dir() == tmp_path
    assert ExperimentConfig(data_dir="x").resolved_data_dir().name == "x"
    monkeypatch.delenv(experiment.DATA_ENV)
    with pytest.raises(ConfigError):
        ExperimentConfig().resolved_data_dir()


def test_record_roundtrip(tmp_path):
    recs = [ExperimentRecord(0.1, 10, 1, 0.05, 0.7, 0.0, 0.36, 0.01),
            ExperimentRecord(1.0, 10, 0, diverged=True),
            ExperimentRecord(0.0, 10, 0, 0.06, 0.75, 0.03, 0.4, 0.05)]
    path = tmp_path / "r.csv"
    experiment.write_results(path, recs)
    lines = path.read_text().splitlines()
    assert lines[0] == "lambda,k,seed,hit_rate_10,gender_best_acc,gender_gap,age_best_acc,age_gap,diverged"
    assert lines[1].startswith("0,10,0,")
    assert lines[3] == "1,10,0,nan,nan,nan,nan,nan,1"
    back = experiment.read_results(path)
    assert back[0].key == (10, 0.0, 0) and back[2].diverged


def test_aggregate_skips_diverged():
    recs = [ExperimentRecord(1.0, 10, 0, 0.1, 0.7, 0.0, 0.3, 0.0),
            ExperimentRecord(1.0, 10, 1, diverged=True),
            ExperimentRecord(1.0, 10, 2, 0.3, 0.8, 0.1, 0.5, 0.2)]
    cell = experiment.aggregate(recs)[(10, 1.0)]
    assert cell["n_seeds"] == 3 and cell["n_diverged"] == 1
    assert cell["hit_rate_10"] == pytest.approx(0.2) and cell["age_gap"] == pytest.approx(0.1)
    all_bad = experiment.aggregate([ExperimentRecord(10.0, 50, 0, diverged=True)])[(50, 10.0)]
    assert math.isnan(all_bad["gender_best_acc"])
    tables = experiment.format_tables(experiment.aggregate(recs + [ExperimentRecord(10.0, 10, 0, diverged=True)]))
    assert "20.00†" in tables and "diverged" in tables


# --- command line -----------------------------------------------------------


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_prepare(mini_dir, tmp_path, capsys):
    code, out, _ = run(["prepare", "--data-dir", mini_dir, "--out", tmp_path / "a", "--canonical"], capsys)
    assert code == 0 and "users 5" in out
    summary = json.loads((tmp_path / "a" / "dataset_summary.json").read_text())
    assert summary["n_users"] == 5 and summary["n_test_users"] == 5
    assert summary["majority"]["gender"] == pytest.approx(0.6)
    run(["prepare", "--data-dir", mini_dir, "--out", tmp_path / "b", "--canonical"], capsys)
    for name in ("dataset.csv", "dataset_summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not (tmp_path / "a" / "manifest_prepare.json").exists()


def test_input_errors(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(experiment.DATA_ENV, raising=False)
    assert run(["prepare", "--data-dir", tmp_path / "missing", "--out", tmp_path], capsys)[0] == 2
    assert run(["prepare", "--out", tmp_path], capsys)[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["prepare", "--config", bad, "--out", tmp_path], capsys)[0] == 2
    assert run(["prepare", "--config", tmp_path / "nope.json"], capsys)[0] == 2
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "ratings.dat").write_text("1::2::3::4\n1::2\n")
    (broken / "users.dat").write_text("1::F::1::10::48067\n")
    code, _, err = run(["prepare", "--data-dir", broken, "--out", tmp_path], capsys)
    assert code == 2 and ":2:" in err


def test_train_and_audit(small_synth_dir, tmp_path, capsys):
    out = tmp_path / "o"
    code, stdout, _ = run(["train", "--data-dir", small_synth_dir, "--out", out, "--k", 6, "--epochs", 3,
                           "--lambda", 0.1, "--eval-every", 1], capsys)
    assert code == 0 and "hit_rate@10" in stdout
    ckpt = out / "checkpoints" / "k6_lam0.1_seed0.json"
    assert ckpt.is_file() and (out / "figures" / "k6_lam0.1_seed0_training.png").is_file()
    log = (out / "logs" / "k6_lam0.1_seed0_epochs.csv").read_text().splitlines()
    assert log[0] == "epoch,mean_loss,hit_rate_at_10,head_gender_train_acc,head_age_train_acc"
    assert len(log) == 4 and all(line.split(",")[2] for line in log[1:])
    assert (out / "manifest_train.json").is_file()

    code, stdout, _ = run(["audit", "--data-dir", small_synth_dir, "--out", out, "--checkpoint", ckpt], capsys)
    assert code == 0 and "large class baseline" in stdout
    summary = (out / "audit" / "k6_lam0.1_seed0_summary.csv").read_text().splitlines()
    assert summary[0] == "attribute,majority,best_attacker,best_accuracy,leakage_gap" and len(summary) == 3


def test_audit_errors(small_synth_dir, mini_dir, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["train", "--data-dir", mini_dir, "--out", out, "--k", 2, "--epochs", 2], capsys)[0] == 0
    ckpt = out / "checkpoints" / "k2_lam0_seed0.json"
    code, _, err = run(["audit", "--data-dir", small_synth_dir, "--out", out, "--checkpoint", ckpt], capsys)
    assert code == 2 and "users" in err
    assert run(["audit", "--data-dir", mini_dir, "--checkpoint", tmp_path / "none.json"], capsys)[0] == 2


def test_train_bad_config_and_divergence(small_synth_dir, tmp_path, capsys):
    assert run(["train", "--data-dir", small_synth_dir, "--out", tmp_path, "--epochs", 0], capsys)[0] == 2
    assert run(["train", "--data-dir", small_synth_dir, "--out", tmp_path, "--k", -3], capsys)[0] == 2
    code, _, err = run(["train", "--data-dir", small_synth_dir, "--out", tmp_path, "--k", 8, "--epochs", 30,
                        "--lambda", 1000], capsys)
    assert code == 1 and "diverged" in err
    assert (tmp_path / "logs" / "k8_lam1000_seed0_epochs.csv").is_file()


def test_verify_theory_cli(tmp_path, capsys):
    code, _, err = run(["verify-theory", "--trials", 0], capsys)
    assert code == 2 and "trials must be positive" in err
    for d in ("a", "b"):
        assert run(["verify-theory", "--trials", 500, "--seed", 7, "--out", tmp_path / d], capsys)[0] == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "verify_theory.json").read_bytes() == (b / "verify_theory.json").read_bytes()
    rows = list(csv.reader((a / "theory_sweeps.csv").open()))
    assert rows[0] == ["sweep", "trials", "counterexamples"]
    assert [r[0] for r in rows[1:]] == ["theorem1", "dpi", "chain_rule", "mi_bounds"]
    assert all(r[2] == "0" for r in rows[1:])


def test_verify_theory_reports_counterexample(monkeypatch, tmp_path, capsys):
    real = infotheory.verify_theory

    def broken(trials, seed):
        summary = real(trials, seed)
        summary["theorem1"]["counterexamples"] = 1
        summary["theorem1"]["examples"] = [{"joint": {"dims": [2, 2, 2], "table": [0.125] * 8}}]
        return summary

    monkeypatch.setattr(infotheory, "verify_theory", broken)
    code, _, err = run(["verify-theory", "--trials", 10], capsys)
    assert code == 1 and '"table"' in err


@pytest.fixture(scope="module")
def sweep_dirs(small_synth_dir, tmp_path_factory):
    dirs = []
    for name in ("s1", "s2"):
        out = tmp_path_factory.mktemp(name)
        assert cli.main(["sweep", "--data-dir", str(small_synth_dir), "--out", str(out), *SWEEP_ARGS]) == 0
        dirs.append(out)
    return dirs


def test_sweep_grid_and_header(sweep_dirs):
    out = sweep_dirs[0]
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == ",".join(experiment.RESULT_FIELDS)
    recs = experiment.read_results(out / "results.csv")
    assert len(recs) == 3 * 2 * 2
    assert {(r.lam, r.k, r.seed) for r in recs} == {(lam, k, s) for lam in (0, 0.1, 1000) for k in (4, 8) for s in (0, 1)}
    assert all(r.diverged for r in recs if r.lam == 1000)
    assert not any(r.diverged for r in recs if r.lam < 1000)
    assert len(list((out / "checkpoints").glob("*.json"))) == 8
    for fig in ("sweep.png", "tradeoff.png"):
        assert (out / "figures" / fig).stat().st_size > 0
    tables = (out / "tables.md").read_text()
    assert "diverged" in tables and "naive" in tables


def test_sweep_aggregation_matches_brute_force(sweep_dirs):
    with open(sweep_dirs[0] / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    pareto = json.loads((sweep_dirs[0] / "pareto.json").read_text())
    for p in pareto["points"]:
        mine = [r for r in rows if float(r["lambda"]) == p["lambda"] and int(r["k"]) == p["k"] and r["diverged"] == "0"]
        hr = sum(float(r["hit_rate_10"]) for r in mine) / len(mine)
        gap = max(sum(float(r[f"{a}_gap"]) for r in mine) / len(mine) for a in ("gender", "age"))
        assert p["l"] == pytest.approx(1 - hr, abs=1e-12)
        assert p["h"] == pytest.approx(gap, abs=1e-12)
    assert len(pareto["points"]) == 4  # fully diverged cells are not trade-off points
    pts = [infotheory.TradeoffPoint(p["l"], p["h"]) for p in pareto["points"]]
    for p, tp in zip(pareto["points"], pts):
        dominated = any(infotheory.dominates(q, tp) for q in pts)
        assert p["pareto"] == (not dominated)
    assert [(f["lambda"], f["k"]) for f in pareto["front"]] == [(p["lambda"], p["k"]) for p in pareto["points"] if p["pareto"]]


def test_sweep_canonical_rerun_identical(sweep_dirs):
    a, b = sweep_dirs
    for rel in ("results.csv", "tables.md", "pareto.json", "majority.json", "figures/sweep.png",
                "figures/tradeoff.png", "checkpoints/k4_lam0.1_seed1.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_report_rerenders(sweep_dirs, tmp_path, capsys):
    out = sweep_dirs[0]
    before = (out / "tables.md").read_bytes()
    code, stdout, _ = run(["report", "--out", out, "--canonical"], capsys)
    assert code == 0 and "Gender prediction" in stdout
    assert (out / "tables.md").read_bytes() == before
    assert run(["report", "--out", tmp_path], capsys)[0] == 2


def test_parallel_sweep_matches_serial(small_synth_dir, sweep_dirs, tmp_path, capsys):
    args = ["sweep", "--data-dir", small_synth_dir, "--out", tmp_path, "--lambdas", "0,0.1", "--ks", "4",
            "--seeds", "0,1", "--epochs", "3", "--canonical", "--workers", "2", "--no-checkpoints"]
    assert run(args, capsys)[0] == 0
    par = {r.key: r for r in experiment.read_results(tmp_path / "results.csv")}
    ser = {r.key: r for r in experiment.read_results(sweep_dirs[0] / "results.csv")}
    for key, rec in par.items():
        assert rec == ser[key]
    assert np.all([(tmp_path / "results.csv").exists(), not (tmp_path / "checkpoints").exists()])
