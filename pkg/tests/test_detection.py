import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avresilience.detection import (
    Confusion,
    DetectorError,
    DetectorKind,
    DetectorModel,
    Metrics,
    classify,
    confusion,
    cross_validate,
    evaluate,
    fit,
    score,
)
from avresilience.detection.forest import RandomForest, Tree
from avresilience.detection.linear import LogisticRegression
from avresilience.telemetry import Label, LabeledDataset, as_dataset

KINDS = ["rf", "lr", "knn"]
FAST = {"rf": {"n_trees": 15, "max_depth": 10}, "lr": {"iterations": 300}, "knn": {"k": 5}}


def brute_confusion(y_true, y_pred):
    tp = fp = tn = fn = 0
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 0 and p == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def lr_model(weights, bias, threshold=0.5):
    scorer = LogisticRegression()
    scorer.load_memory({"weights": list(weights), "bias": bias})
    names = tuple(f"f{i}" for i in range(len(weights)))
    return DetectorModel(DetectorKind.LOGISTIC_REGRESSION, {}, names, scorer, threshold)


# -- fit ------------------------------------------------------------------------------


def test_lr_separable_training_accuracy():
    X = np.array([[0.0, 0.0], [0.2, 0.1], [0.1, 0.3], [2.0, 2.0], [2.2, 1.9], [1.8, 2.3]])
    y = np.array([0, 0, 0, 1, 1, 1])
    model = fit(as_dataset(X, y, ("a", "b")), "lr")
    assert evaluate(model, as_dataset(X, y, ("a", "b"))).accuracy == 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_fit_is_deterministic(kind, small_dataset):
    a = fit(small_dataset, kind, FAST[kind], seed=3)
    b = fit(small_dataset, kind, FAST[kind], seed=3)
    probe = small_dataset.features[::20][:100]
    assert np.array_equal(a.scores(probe), b.scores(probe))
    assert a.threshold == 0.5


def test_single_tree_reproduces_consistent_training_set(rng):
    X = rng.normal(size=(300, 4))
    X[:, 3] = np.round(X[:, 3], 1)  # a coarse feature with repeated values
    y = (X[:, 0] * X[:, 1] + np.sin(3 * X[:, 2]) > 0).astype(int)
    ds = as_dataset(X, y, ("a", "b", "c", "d"))
    model = fit(ds, "rf", {"n_trees": 1, "max_depth": None, "bootstrap": False, "max_features": None})
    assert np.array_equal(model.decisions(X), y)


def test_rejects_single_class():
    ds = as_dataset([[0.0], [1.0]], [1, 1], ("x",))
    with pytest.raises(DetectorError):
        fit(ds, "rf")


@pytest.mark.parametrize(
    "kind,params",
    [("rf", {"n_trees": 0}), ("rf", {"max_depth": 0}), ("knn", {"k": 0}), ("knn", {"k": 50}),
     ("lr", {"iterations": 0}), ("lr", {"learning_rate": 0.0}), ("lr", {"bogus": 1})],
)
def test_invalid_hyperparameters(kind, params):
    ds = as_dataset(np.arange(20.0).reshape(10, 2), [0, 1] * 5, ("a", "b"))
    with pytest.raises(DetectorError):
        fit(ds, kind, params)


def test_unknown_kind():
    with pytest.raises(DetectorError):
        DetectorKind.parse("xgb")
    assert DetectorKind.parse("RandomForest") is DetectorKind.RANDOM_FOREST


# -- score / classify -------------------------------------------------------------------


def test_knn_unanimous_vote():
    X = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
    y = np.array([1, 1, 1, 0, 0, 0])
    model = fit(as_dataset(X, y, ("x",)), "knn", {"k": 3})
    assert score(model, np.array([1.0])) == 1.0


def test_knn_vote_fraction():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [20.0], [21.0]])
    y = np.array([1, 1, 0, 0, 0, 0])
    model = fit(as_dataset(X, y, ("x",)), "knn", {"k": 4})
    assert score(model, np.array([1.5])) == 0.5


def test_lr_zero_weights_score_half(rng):
    model = lr_model([0.0, 0.0, 0.0], 0.0)
    for x in rng.normal(scale=100, size=(20, 3)):
        assert score(model, x) == 0.5


def test_rf_score_is_vote_fraction(small_dataset):
    model = fit(small_dataset, "rf", {"n_trees": 7, "max_depth": 6}, seed=1)
    s = model.scores(small_dataset.features[:200])
    assert np.allclose(s * 7, np.round(s * 7))


def test_rf_votes_match_independent_traversal(small_dataset):
    forest = RandomForest(n_trees=5, max_depth=6).fit(small_dataset.features, small_dataset.labels, seed=2)
    X = small_dataset.features[:150]

    def walk(tree: Tree, x):
        node = 0
        while tree.feature[node] >= 0:
            node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        return tree.vote[node]

    expected = [[int(walk(t, x)) for t in forest.trees] for x in X]
    assert forest.votes(X).tolist() == expected


def test_classify_rule_examples():
    # sigmoid(b) for chosen biases: exact thresholds are set from the model's own score
    m = lr_model([0.0], float(np.log(0.7 / 0.3)))
    s = score(m, np.array([0.0]))
    assert s == pytest.approx(0.7)
    assert classify(m.with_threshold(0.45), np.array([0.0])) is Label.ABNORMAL
    assert classify(m.with_threshold(s), np.array([0.0])) is Label.NORMAL
    low = lr_model([0.0], -800.0)
    assert score(low, np.array([0.0])) == 0.0
    for thr in (0.0, 0.3, 1.0):
        assert classify(low.with_threshold(thr), np.array([0.0])) is Label.NORMAL


@given(
    bias=st.floats(-8, 8),
    thresholds=st.lists(st.floats(0, 1), min_size=1, max_size=20),
)
def test_classify_iff_score_exceeds_threshold(bias, thresholds):
    m = lr_model([0.5, -0.25], bias)
    x = np.array([0.3, 1.2])
    s = score(m, x)
    assert 0.0 <= s <= 1.0
    for thr in thresholds + [s]:
        assert (classify(m.with_threshold(thr), x) is Label.ABNORMAL) == (s > thr)


@pytest.mark.parametrize("kind", KINDS)
def test_scores_bounded_and_rule_sweep(kind, small_dataset):
    model = fit(small_dataset, kind, FAST[kind], seed=0)
    X = small_dataset.features[::10]
    s = model.scores(X)
    assert np.all((s >= 0) & (s <= 1))
    for thr in np.linspace(0, 1, 21):
        assert np.array_equal(model.with_threshold(thr).decisions(X), (s > thr).astype(np.int8))


def test_dimension_mismatch_and_non_finite(small_dataset):
    model = fit(small_dataset, "lr", FAST["lr"])
    with pytest.raises(DetectorError):
        model.score(np.zeros(small_dataset.n_features + 1))
    bad = small_dataset.features[0].copy()
    bad[0] = np.nan
    with pytest.raises(DetectorError):
        model.score(bad)


def test_threshold_range():
    with pytest.raises(DetectorError):
        lr_model([0.0], 0.0, threshold=1.5)


@pytest.mark.parametrize("kind", KINDS)
def test_serialization_round_trip(kind, small_dataset, tmp_path):
    model = fit(small_dataset, kind, FAST[kind], seed=4).with_threshold(0.37)
    path = tmp_path / "m.json"
    model.save(path)
    loaded = DetectorModel.load(path)
    X = small_dataset.features[::7]
    assert np.max(np.abs(loaded.scores(X) - model.scores(X))) <= 1e-12
    assert loaded.threshold == 0.37
    assert loaded.feature_names == model.feature_names
    assert loaded.to_json() == model.to_json()


def test_knn_k1_training_accuracy(rng):
    X = rng.normal(size=(400, 5))
    assert len({tuple(r) for r in X}) == 400
    y = rng.integers(0, 2, 400)
    ds = as_dataset(X, y, tuple("abcde"))
    assert evaluate(fit(ds, "knn", {"k": 1}), ds).accuracy == 1.0


# -- metrics ------------------------------------------------------------------------------


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=0, max_size=200))
def test_confusion_matches_brute_force(pairs):
    y_true = np.array([p[0] for p in pairs], dtype=int)
    y_pred = np.array([p[1] for p in pairs], dtype=int)
    c = confusion(y_true, y_pred)
    assert (c.tp, c.fp, c.tn, c.fn) == brute_confusion(y_true, y_pred)
    m = Metrics.from_confusion(c)
    tp, fp, tn, fn = brute_confusion(y_true, y_pred)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    assert m.precision == pytest.approx(p)
    assert m.recall == pytest.approx(r)
    assert m.f1 == pytest.approx(2 * p * r / (p + r) if p + r else 0.0)
    assert m.accuracy == pytest.approx((tp + tn) / len(pairs) if pairs else 0.0)
    for v in (m.precision, m.recall, m.f1, m.accuracy):
        assert 0.0 <= v <= 1.0


def test_metrics_zero_denominators():
    m = Metrics.from_confusion(Confusion(0, 0, 5, 0))
    assert (m.precision, m.recall, m.f1, m.accuracy) == (0.0, 0.0, 0.0, 1.0)


@pytest.mark.parametrize("kind", KINDS)
def test_perfect_feature_gives_perfect_metrics(kind, rng):
    y = np.array([0, 1] * 100)
    X = np.column_stack([y.astype(float), rng.normal(size=200) * 0.01])
    res = cross_validate(as_dataset(X, y, ("leak", "noise")), kind, FAST[kind], k=5, seed=0)
    assert res.summary() == {"precision": 1.0, "recall": 1.0, "f1": 1.0, "accuracy": 1.0}


@pytest.mark.parametrize("kind", KINDS)
def test_cross_validation_matches_oracle(kind, small_dataset):
    res = cross_validate(small_dataset, kind, FAST[kind], k=5, seed=2)
    assert len(res.folds) == 5
    all_idx = np.sort(np.concatenate(res.fold_indices))
    assert np.array_equal(all_idx, np.arange(len(small_dataset)))
    for m, pred, idx in zip(res.folds, res.fold_predictions, res.fold_indices):
        c = m.confusion
        assert (c.tp, c.fp, c.tn, c.fn) == brute_confusion(small_dataset.labels[idx], pred)
    assert res.f1 == pytest.approx(sum(m.f1 for m in res.folds) / 5)


def test_cross_validation_parallel_equals_sequential(small_dataset):
    a = cross_validate(small_dataset, "rf", FAST["rf"], k=4, seed=9, workers=1)
    b = cross_validate(small_dataset, "rf", FAST["rf"], k=4, seed=9, workers=3)
    assert a.to_dict() == b.to_dict()


def test_dataset_labels_are_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.labels[0] = 1
    assert isinstance(small_dataset, LabeledDataset)
