"""Gradient-boosted trees, metrics and random search."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wayside import clf
from wayside.clf import (GbdtConfig, GbdtModel, auc_roc, confusion, metrics_from_confusion,
                         predict_proba, random_search, train_gbdt)


def blobs(n=200, d=4, seed=0, shift=1.5):
    r = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2), np.ones(n - n // 2)].astype(int)
    X = r.normal(size=(n, d))
    X[:, 0] += shift * y
    return X, y


# -- config ------------------------------------------------------------------------

def test_config_bounds_and_roundtrip(rng):
    for _ in range(50):
        c = clf.sample_config(rng)
        for name, (lo, hi) in clf.INTERVALS.items():
            assert lo <= getattr(c, name) <= hi
        assert GbdtConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        GbdtConfig(learning_rate=5.0)
    with pytest.raises(ValueError):
        GbdtConfig.from_dict({"bogus": 1})


# -- training ---------------------------------------------------------------------

def test_threshold_separable_fits_perfectly():
    X = np.linspace(0, 1, 40)[:, None]
    y = (X[:, 0] > 0.37).astype(int)
    m = train_gbdt(X, y, GbdtConfig(subsample=1.0, colsample_bytree=1.0, n_estimators=50))
    assert np.all(clf.predict(m, X) == y)


def test_logistic_gradient_hand_value():
    g, h = clf.logistic_gradients(np.array([0.5]), np.array([1.0]))
    assert g[0] == -0.5 and h[0] == 0.25


def test_deterministic_given_seed():
    X, y = blobs()
    c = GbdtConfig(subsample=1.0, colsample_bytree=1.0, seed=3)
    a, b = train_gbdt(X, y, c), train_gbdt(X, y, c)
    assert a.to_json() == b.to_json()
    c2 = GbdtConfig(seed=3)
    assert train_gbdt(X, y, c2).to_json() == train_gbdt(X, y, c2).to_json()


def test_single_class_raises():
    with pytest.raises(clf.TrainingError):
        train_gbdt(np.ones((5, 2)), np.zeros(5))


def test_nan_rows_rejected_and_counted():
    X, y = blobs(60)
    X[:3, 1] = np.nan
    m = train_gbdt(X, y, GbdtConfig(n_estimators=50))
    assert m.n_rejected == 3


def test_tree_structure_invariants(rng):
    X, y = blobs(300, seed=2)
    for _ in range(5):
        c = clf.sample_config(rng)
        m = train_gbdt(X, y, c)
        assert len(m.trees) == c.n_estimators
        for t in m.trees:
            assert t.depth() <= c.max_depth and t.n_leaves >= 1


@pytest.mark.parametrize("lr", [0.01, 0.1, 0.3])
@pytest.mark.parametrize("seed", [0, 1])
def test_rounds_never_increase_training_loss(lr, seed):
    X, y = blobs(300, seed=seed, shift=0.8)
    losses = []
    cfg = GbdtConfig(learning_rate=lr, n_estimators=50, subsample=1.0, colsample_bytree=0.8,
                     seed=seed)
    train_gbdt(X, y, cfg, callback=lambda r, m: losses.append(clf.logistic_loss(clf.sigmoid(m), y)))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_zero_trees_is_sigmoid_of_base():
    m = GbdtModel((), 0.0, GbdtConfig(), 3)
    assert np.all(predict_proba(m, np.zeros((4, 3))) == 0.5)
    m = GbdtModel((), 1.3, GbdtConfig(), 3)
    assert predict_proba(m, np.zeros((1, 3)))[0] == pytest.approx(1 / (1 + math.exp(-1.3)))


def test_monotone_in_informative_feature():
    r = np.random.default_rng(1)
    X = r.uniform(0, 1, size=(400, 2))
    y = (X[:, 0] > 0.4).astype(int)
    m = train_gbdt(X, y, GbdtConfig(max_depth=3, n_estimators=60, subsample=1.0,
                                    colsample_bytree=1.0))
    probe = np.c_[np.linspace(0, 1, 50), np.full(50, 0.5)]
    p = predict_proba(m, probe)
    assert np.all(np.diff(p) >= -1e-12)


def test_layout_mismatch_raises():
    X, y = blobs(60)
    m = train_gbdt(X, y, GbdtConfig(n_estimators=50), layout=("a", "b", "c", "d"))
    with pytest.raises(ValueError):
        predict_proba(m, X, layout=("a", "b", "c", "x"))
    with pytest.raises(ValueError):
        predict_proba(m, X[:, :3])


def test_json_roundtrip():
    X, y = blobs(80)
    m = train_gbdt(X, y, GbdtConfig(n_estimators=50))
    m2 = GbdtModel.from_json(m.to_json())
    assert np.array_equal(predict_proba(m, X), predict_proba(m2, X))


def test_soft_targets_and_zero_weights():
    X, y = blobs(100)
    w = np.ones(100)
    w[:10] = 0.0
    a = train_gbdt(X, y, GbdtConfig(n_estimators=50), sample_weights=w)
    b = train_gbdt(X[10:], y[10:], GbdtConfig(n_estimators=50))
    assert a.to_json() == b.to_json()
    soft = np.clip(y + 0.1 * (1 - 2 * y), 0, 1)
    m = train_gbdt(X, soft, GbdtConfig(n_estimators=50))
    assert np.all(np.isfinite(predict_proba(m, X)))


# -- metrics ----------------------------------------------------------------------

def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    tot = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return tot / (pos.size * neg.size)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=200))
def test_auc_matches_pairwise(pairs):
    s = np.array([p[0] for p in pairs], float) / 5
    y = np.array([p[1] for p in pairs])
    if y.min() == y.max():
        with pytest.raises(clf.UndefinedMetricError):
            auc_roc(s, y)
        return
    assert auc_roc(s, y) == brute_auc(s, y)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=100))
def test_confusion_identities(pairs):
    pred = np.array([p[0] for p in pairs])
    lab = np.array([p[1] for p in pairs])
    tp, fp, fn, tn = confusion(pred, lab)
    assert tp + fp + fn + tn == len(pairs)
    m = metrics_from_confusion(tp, fp, fn, tn)
    assert m["accuracy"] == pytest.approx(np.mean(pred == lab))
    if tp + fp:
        assert m["precision"] == pytest.approx(tp / (tp + fp))
    if m["precision"] + m["recall"]:
        assert m["f1"] == pytest.approx(2 * m["precision"] * m["recall"] / (m["precision"] + m["recall"]))


def test_metric_examples():
    m = metrics_from_confusion(9, 1, 1, 9)
    assert m == pytest.approx({"accuracy": 0.9, "precision": 0.9, "recall": 0.9, "f1": 0.9})
    y = np.array([0, 0, 1, 1])
    assert clf.score_metrics(np.array([0.1, 0.2, 0.8, 0.9]), y) == pytest.approx(
        {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0, "auc_roc": 1.0})
    assert auc_roc(np.full(4, 0.5), y) == 0.5
    out = clf.score_metrics(np.array([0.2, 0.7]), np.array([1, 1]))
    assert math.isnan(out["auc_roc"]) and "auc_error" in out and out["accuracy"] == 0.5


# -- search -------------------------------------------------------------------------

def test_stratified_folds_partition(rng):
    y = np.r_[np.zeros(30), np.ones(20)].astype(int)
    folds = clf.stratified_folds(y, 5, rng)
    allidx = np.sort(np.concatenate(folds))
    assert np.array_equal(allidx, np.arange(50))
    for f in folds:
        assert y[f].sum() == 4


def test_random_search_contract():
    X, y = blobs(120)
    with pytest.raises(ValueError):
        random_search(X, y, 0)
    one = random_search(X, y, 1, seed=4, k=3)
    assert one.best_config == one.trials[0][0]
    a = random_search(X, y, 3, seed=4, k=3)
    b = random_search(X, y, 3, seed=4, k=3)
    assert [c for c, _ in a.trials] == [c for c, _ in b.trials]
    assert a.best_score >= np.mean(a.trials[0][1])
    assert a.best_score == a.trial_means.max()


def test_rounds_never_increase_loss_random_configs(rng):
    # full-batch rounds; with row subsampling a round optimizes a subset only
    from dataclasses import replace
    X, y = blobs(300, d=5, seed=9, shift=0.8)
    for t in range(10):
        cfg = replace(clf.sample_config(rng, seed=t), subsample=1.0)
        losses = []
        train_gbdt(X, y, cfg, callback=lambda r, m: losses.append(clf.logistic_loss(clf.sigmoid(m), y)))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:])), cfg
