import numpy as np
import pytest

from privleak import adversarial, audit
from privleak.audit import AuditReport


def test_majority_baseline():
    assert audit.majority_baseline([0, 0, 1]) == pytest.approx(2 / 3)
    assert audit.majority_baseline([3, 3, 3, 3]) == 1.0
    with pytest.raises(ValueError):
        audit.majority_baseline([])


def test_stratified_kfold_partition(rng):
    labels = rng.integers(0, 7, size=503)
    labels[:35] = np.arange(35) % 7  # every class present at least five times
    splits = audit.stratified_kfold(labels, 5, seed=3)
    tests = np.concatenate([t for _, t in splits])
    assert sorted(tests.tolist()) == list(range(len(labels)))
    sizes = [len(t) for _, t in splits]
    assert max(sizes) - min(sizes) <= 1
    for train, test in splits:
        assert not set(train.tolist()) & set(test.tolist())
        assert len(train) + len(test) == len(labels)
        for c in range(7):
            expected = np.sum(labels == c) / 5
            assert abs(np.sum(labels[test] == c) - expected) < 1
    again = audit.stratified_kfold(labels, 5, seed=3)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(splits, again))


def test_stratified_kfold_one_per_fold():
    labels = np.repeat([0, 1], 5)
    for _, test in audit.stratified_kfold(labels, 5, seed=0):
        assert sorted(labels[test].tolist()) == [0, 1]


def test_stratified_kfold_too_small():
    with pytest.raises(ValueError, match="fewer than 5"):
        audit.stratified_kfold(np.array([0] * 10 + [1] * 4), 5, seed=0)
    with pytest.raises(ValueError):
        audit.stratified_kfold(np.zeros(10, dtype=int), 1, seed=0)


def _two_blobs(rng, n=200, gap=10.0):
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 3))
    X[:, 0] += gap * y
    return X, y


def test_softmax_separable(rng):
    X, y = _two_blobs(rng)
    clf = audit.train_softmax_attacker(X, y)
    assert clf.converged
    assert np.mean(clf.predict(X) == y) == 1.0
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


def test_knn_memorises_with_k1(rng):
    X = rng.normal(size=(100, 4))
    y = rng.integers(0, 3, size=100)
    assert np.mean(audit.train_knn_attacker(X, y, k_neighbors=1).predict(X) == y) == 1.0


def test_knn_validation(rng):
    with pytest.raises(ValueError):
        audit.KNNAttacker(4)
    with pytest.raises(ValueError):
        audit.train_knn_attacker(rng.normal(size=(5, 2)), np.zeros(5, dtype=int), k_neighbors=7)


def test_knn_rotation_invariant(rng):
    X = rng.normal(size=(300, 5))
    y = (X[:, 0] + 0.5 * rng.normal(size=300) > 0).astype(int)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    queries = rng.normal(size=(100, 5))
    plain = audit.train_knn_attacker(X, y).predict(queries)
    rotated = audit.train_knn_attacker(X @ Q, y).predict(queries @ Q)
    assert np.array_equal(plain, rotated)


def test_tree_depth(rng):
    # XOR: no single split helps
    X = rng.uniform(-1, 1, size=(2000, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    Xt = rng.uniform(-1, 1, size=(2000, 2))
    yt = ((Xt[:, 0] > 0) ^ (Xt[:, 1] > 0)).astype(int)
    assert abs(np.mean(audit.train_tree_attacker(X, y, max_depth=1).predict(Xt) == yt) - 0.5) < 0.05
    # four separated blobs
    centers = np.array([[0, 0], [5, 0], [0, 5], [5, 5]])
    y4 = np.arange(400) % 4
    X4 = centers[y4] + rng.normal(scale=0.5, size=(400, 2))
    assert np.mean(audit.train_tree_attacker(X4, y4, max_depth=6).predict(X4) == y4) > 0.95
    with pytest.raises(ValueError):
        audit.TreeAttacker(max_depth=0)


def test_make_attacker():
    assert [audit.make_attacker(n).name for n in audit.DEFAULT_ATTACKERS] == list(audit.DEFAULT_ATTACKERS)
    with pytest.raises(ValueError):
        audit.make_attacker("svm")


def test_report_arithmetic():
    rep = AuditReport("gender", 0.7, {"softmax": [0.7, 0.8, 0.9], "knn": [0.6, 0.6, 0.6]})
    assert rep.accuracies == {"softmax": pytest.approx(0.8), "knn": pytest.approx(0.6)}
    assert rep.best_attacker == "softmax"
    assert rep.leakage_gap == pytest.approx(0.1)
    assert AuditReport("age", 0.9, {"knn": [0.5]}).leakage_gap == 0.0


def test_noise_embeddings_no_gap(rng):
    n = 3000
    X = rng.normal(size=(n, 10))
    demo = {"gender": (rng.random(n) < 0.28).astype(int), "age": rng.choice(7, size=n, p=[.04, .18, .35, .2, .09, .08, .06])}
    reports = audit.audit_embeddings(X, demo, seed=1)
    for rep in reports.values():
        for acc in rep.accuracies.values():
            assert acc <= rep.majority_baseline + 0.02
        assert rep.leakage_gap < 0.02


def test_audit_detects_signal(rng):
    n = 1000
    y = (rng.random(n) < 0.3).astype(int)
    X = rng.normal(size=(n, 4))
    X[:, 2] += 3 * y
    rep = audit.audit_embeddings(X, {"gender": y}, seed=0)["gender"]
    assert rep.best_accuracy > 0.9
    assert set(rep.fold_accuracies) == set(audit.DEFAULT_ATTACKERS)
    assert all(len(v) == 5 for v in rep.fold_accuracies.values())


def test_permutation_null(rng):
    """Shuffling labels destroys the association the attackers exploited."""
    n = 1500
    y = (rng.random(n) < 0.3).astype(int)
    X = rng.normal(size=(n, 4))
    X[:, 0] += 2 * y
    shuffled = rng.permutation(y)
    rep = audit.audit_embeddings(X, {"gender": shuffled}, seed=0)["gender"]
    assert abs(rep.best_accuracy - rep.majority_baseline) < 0.02


def test_audit_deterministic_and_mismatch(rng):
    X = rng.normal(size=(200, 3))
    demo = {"gender": np.arange(200) % 2}
    a = audit.audit_embeddings(X, demo, seed=4)
    b = audit.audit_embeddings(X, demo, seed=4)
    assert a["gender"].fold_accuracies == b["gender"].fold_accuracies
    with pytest.raises(ValueError, match="labels"):
        audit.audit_embeddings(X[:10], demo)


def test_writers(tmp_path):
    reports = {
        "age": AuditReport("age", 0.35, {"softmax": [0.4, 0.4], "knn": [0.3, 0.34]}),
        "gender": AuditReport("gender", 0.72, {"softmax": [0.75, 0.77], "knn": [0.7, 0.7]}),
    }
    audit.write_fold_csv(tmp_path / "f.csv", reports)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "attribute,attacker,fold,accuracy"
    assert lines[1] == "age,softmax,0,0.400000"
    assert len(lines) == 1 + 8
    audit.write_summary_csv(tmp_path / "s.csv", reports)
    assert (tmp_path / "s.csv").read_text().splitlines()[2] == "gender,0.720000,softmax,0.760000,0.040000"
    table = audit.format_table(reports)
    assert "large class baseline" in table and "76.00" in table and "leakage gap" in table


def test_softmax_attacker_shares_head_forward(rng):
    X = rng.normal(2.0, 3.0, size=(300, 4))
    y = (X[:, 1] + rng.normal(size=300) > 2).astype(int)
    clf = audit.train_softmax_attacker(X, y)
    # fold the standardisation into an equivalent head on raw coordinates
    W = clf.head_.W / clf.scale_[:, None]
    c = clf.head_.c - (clf.mean_ / clf.scale_) @ clf.head_.W
    raw = adversarial.AdversarialHead("gender", W, c)
    for row, p in zip(X[:20], clf.predict_proba(X[:20])):
        np.testing.assert_allclose(adversarial.head_forward(raw, row), p, rtol=0, atol=1e-12)


def test_softmax_attacker_objective_gradient(rng):
    clf = audit.SoftmaxAttacker(l2=0.1)
    X, Y = rng.normal(size=(40, 3)), np.eye(4)[rng.integers(0, 4, 40)]
    theta = rng.normal(size=3 * 4 + 4)
    _, grad = clf._objective(theta, X, Y)
    h = 1e-6
    fd = np.array([(clf._objective(theta + h * e, X, Y)[0] - clf._objective(theta - h * e, X, Y)[0]) / (2 * h)
                   for e in np.eye(len(theta))])
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-6
