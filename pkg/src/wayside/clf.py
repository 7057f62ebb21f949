"""
Gradient-boosted decision trees for binary classification.

Trees are grown level by level with an exact greedy split search over the
presorted feature values (numba kernel).  Leaf weights use first and second
order statistics of the logistic loss with L1 shrinkage ``alpha`` and a fixed
L2 term ``reg_lambda``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numba
import numpy as np
from scipy.stats import rankdata

# tuning intervals; every GbdtConfig must lie inside them
INTERVALS = {
    "alpha": (0.01, 0.1),
    "colsample_bytree": (0.5, 1.0),
    "subsample": (0.5, 1.0),
    "learning_rate": (0.01, 0.3),
    "max_depth": (3, 10),
    "min_child_weight": (1.0, 6.0),
    "n_estimators": (50, 200),
}
_INTEGER_FIELDS = ("max_depth", "n_estimators")


class TrainingError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class GbdtConfig:
    alpha: float = 0.05
    colsample_bytree: float = 0.8
    subsample: float = 0.8
    learning_rate: float = 0.1
    max_depth: int = 6
    min_child_weight: float = 1.0
    n_estimators: int = 100
    seed: int = 0
    reg_lambda: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        for name, (lo, hi) in INTERVALS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        for name in _INTEGER_FIELDS:
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"{name} must be an integer")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GBDT config keys {sorted(unknown)}")
        return cls(**d)


def sample_config(rng: np.random.Generator, seed: int = 0) -> GbdtConfig:
    """Uniform draw inside the tuning intervals (integers inclusive)."""
    kw = {}
    for name, (lo, hi) in INTERVALS.items():
        if name in _INTEGER_FIELDS:
            kw[name] = int(rng.integers(lo, hi + 1))
        else:
            kw[name] = float(rng.uniform(lo, hi))
    return GbdtConfig(seed=seed, **kw)


@dataclass(frozen=True)
class Tree:
    """Flat array tree; ``feature[i] < 0`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            i, d = stack.pop()
            if self.feature[i] < 0:
                best = max(best, d)
            else:
                stack += [(self.left[i], d + 1), (self.right[i], d + 1)]
        return best

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        feat, thr, left, right, val = [], [], [], [], []

        def walk(node):
            i = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(0.0)
            if "leaf" in node:
                val[i] = node["leaf"]
                return i
            feat[i] = node["feature"]
            thr[i] = node["threshold"]
            left[i] = walk(node["left"])
            right[i] = walk(node["right"])
            return i

        walk(d)
        return cls(np.array(feat, np.int64), np.array(thr, float), np.array(left, np.int64),
                   np.array(right, np.int64), np.array(val, float))


@dataclass(frozen=True)
class GbdtModel:
    trees: tuple[Tree, ...]
    base_score: float
    config: GbdtConfig
    n_features: int
    layout: tuple[str, ...] | None = None
    n_rejected: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "base_score": self.base_score,
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "layout": list(self.layout) if self.layout is not None else None,
            "n_rejected": self.n_rejected,
            "trees": [t.to_dict() for t in self.trees],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        d = json.loads(text)
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            base_score=float(d["base_score"]),
            config=GbdtConfig.from_dict(d["config"]),
            n_features=int(d["n_features"]),
            layout=tuple(d["layout"]) if d["layout"] is not None else None,
            n_rejected=int(d.get("n_rejected", 0)),
        )


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _l1(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@numba.njit(cache=True)
def _grow_tree(X, order, grad, hess, active, features, max_depth, min_child_weight,
               alpha, lam, lr):
    """Level-wise exact greedy tree.  ``order[f]`` sorts all rows by feature f;
    rows with ``active == False`` are ignored."""
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feat = -np.ones(cap, np.int64)
    thr = np.zeros(cap)
    left = -np.ones(cap, np.int64)
    right = -np.ones(cap, np.int64)
    val = np.zeros(cap)
    node_G = np.zeros(cap)
    node_H = np.zeros(cap)
    node_of = -np.ones(n, np.int64)
    for r in range(n):
        if active[r]:
            node_of[r] = 0
            node_G[0] += grad[r]
            node_H[0] += hess[r]
    n_nodes = 1
    level = np.zeros(1, np.int64)
    for depth in range(max_depth):
        m = level.size
        slot = -np.ones(cap, np.int64)
        for j in range(m):
            slot[level[j]] = j
        best_gain = np.zeros(m)
        best_feat = -np.ones(m, np.int64)
        best_thr = np.zeros(m)
        parent_score = np.zeros(m)
        for j in range(m):
            t = _l1(node_G[level[j]], alpha)
            parent_score[j] = t * t / (node_H[level[j]] + lam)
        GL = np.zeros(m)
        HL = np.zeros(m)
        last = np.zeros(m)
        seen = np.zeros(m, np.bool_)
        for fi in range(features.size):
            f = features[fi]
            GL[:] = 0.0
            HL[:] = 0.0
            seen[:] = False
            for k in range(n):
                r = order[f, k]
                nd = node_of[r]
                if nd < 0:
                    continue
                j = slot[nd]
                if j < 0:
                    continue
                x = X[r, f]
                if seen[j] and x > last[j]:
                    GR = node_G[nd] - GL[j]
                    HR = node_H[nd] - HL[j]
                    if HL[j] >= min_child_weight and HR >= min_child_weight:
                        tl = _l1(GL[j], alpha)
                        tr = _l1(GR, alpha)
                        gain = 0.5 * (tl * tl / (HL[j] + lam) + tr * tr / (HR + lam)
                                      - parent_score[j])
                        if gain > best_gain[j] + 1e-12:
                            best_gain[j] = gain
                            best_feat[j] = f
                            best_thr[j] = 0.5 * (last[j] + x)
                GL[j] += grad[r]
                HL[j] += hess[r]
                last[j] = x
                seen[j] = True
        n_split = 0
        for j in range(m):
            if best_feat[j] >= 0:
                n_split += 1
        if n_split == 0:
            break
        nxt = np.empty(2 * n_split, np.int64)
        q = 0
        for j in range(m):
            nd = level[j]
            if best_feat[j] < 0:
                continue
            feat[nd] = best_feat[j]
            thr[nd] = best_thr[j]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            nxt[q] = n_nodes
            nxt[q + 1] = n_nodes + 1
            q += 2
            n_nodes += 2
        for r in range(n):
            nd = node_of[r]
            if nd < 0 or feat[nd] < 0 or slot[nd] < 0:
                continue
            child = left[nd] if X[r, feat[nd]] < thr[nd] else right[nd]
            node_of[r] = child
            node_G[child] += grad[r]
            node_H[child] += hess[r]
        level = nxt
    for i in range(n_nodes):
        if feat[i] < 0:
            val[i] = -lr * _l1(node_G[i], alpha) / (node_H[i] + lam)
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], val[:n_nodes]


@numba.njit(cache=True)
def _predict_tree(X, feat, thr, left, right, val, out):
    for r in range(X.shape[0]):
        i = 0
        while feat[i] >= 0:
            i = left[i] if X[r, feat[i]] < thr[i] else right[i]
        out[r] += val[i]


# ---------------------------------------------------------------------------
# Training and prediction
# ---------------------------------------------------------------------------

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logistic_gradients(p, y):
    """First and second derivative of the logistic loss w.r.t. the margin."""
    p = np.asarray(p, dtype=float)
    return p - y, p * (1.0 - p)


def logistic_loss(p, y, weights=None) -> float:
    p = np.clip(np.asarray(p, dtype=float), 1e-15, 1 - 1e-15)
    ll = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(np.average(ll, weights=weights))


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def train_gbdt(X, y, config: GbdtConfig = GbdtConfig(), sample_weights=None,
               layout=None, callback=None) -> GbdtModel:
    """Fit boosted trees on the logistic loss.

    ``y`` may hold soft targets in [0, 1].  Rows with NaN features are
    dropped and counted in ``model.n_rejected``.  ``callback(round, margin)``
    is called after every round with the training margins (used by tests).
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if X.shape[0] != y.size or w.size != y.size:
        raise ValueError("X, y and weights disagree in length")
    ok = ~np.isnan(X).any(axis=1)
    n_rejected = int((~ok).sum())
    # zero-weight rows are dropped so they cannot move split thresholds
    keep = ok & (w > 0)
    X, y, w = X[keep], y[keep], w[keep]
    pos = float(np.sum(w * y))
    neg = float(np.sum(w * (1 - y)))
    if pos <= 0 or neg <= 0:
        raise TrainingError("training data must contain both classes")
    base = math.log(pos / neg)
    rng = np.random.default_rng(config.seed)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    margin = np.full(y.size, base)
    n_feat = X.shape[1]
    n_cols = max(1, int(round(config.colsample_bytree * n_feat)))
    trees = []
    for rnd in range(config.n_estimators):
        p = sigmoid(margin)
        g, h = logistic_gradients(p, y)
        g, h = g * w, h * w
        active = rng.random(y.size) < config.subsample if config.subsample < 1 else np.ones(y.size, bool)
        if not active.any():
            active[rng.integers(y.size)] = True
        feats = np.sort(rng.permutation(n_feat)[:n_cols]) if n_cols < n_feat else np.arange(n_feat)
        t = Tree(*_grow_tree(X, order, g, h, active, feats.astype(np.int64), config.max_depth,
                             config.min_child_weight, config.alpha, config.reg_lambda,
                             config.learning_rate))
        _predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, margin)
        trees.append(t)
        if callback is not None:
            callback(rnd, margin)
    return GbdtModel(tuple(trees), base, config, n_feat,
                     tuple(layout) if layout is not None else None, n_rejected)


def decision_function(model: GbdtModel, X, layout=None) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    if layout is not None and model.layout is not None and tuple(layout) != model.layout:
        raise ValueError("feature layout does not match the training layout")
    out = np.full(X.shape[0], model.base_score)
    for t in model.trees:
        _predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, out)
    return out


def predict_proba(model: GbdtModel, X, layout=None) -> np.ndarray:
    """P(anomalous) per row, ``sigmoid(base_score + sum of tree scores)``."""
    return sigmoid(decision_function(model, X, layout))


def predict(model: GbdtModel, X, layout=None) -> np.ndarray:
    return (predict_proba(model, X, layout) >= model.config.threshold).astype(int)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def auc_roc(scores, labels) -> float:
    """Mann-Whitney rank statistic with average ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion(pred, labels) -> tuple[int, int, int, int]:
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    return tp, fp, fn, tn


def metrics_from_confusion(tp, fp, fn, tn) -> dict:
    """Ratios with 0 used where a denominator vanishes."""
    n = tp + fp + fn + tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": (tp + tn) / n if n else 0.0, "precision": precision,
            "recall": recall, "f1": f1}


def score_metrics(scores, labels, threshold: float = 0.5) -> dict:
    labels = np.asarray(labels).astype(int)
    scores = np.asarray(scores, dtype=float)
    out = metrics_from_confusion(*confusion(scores >= threshold, labels))
    try:
        out["auc_roc"] = auc_roc(scores, labels)
    except UndefinedMetricError as exc:
        out["auc_roc"] = float("nan")
        out["auc_error"] = str(exc)
    return out


def evaluate(model: GbdtModel, X, y, layout=None) -> dict:
    """accuracy, precision, recall, f1 and auc_roc (NaN plus ``auc_error`` if one class)."""
    y = np.asarray(y)
    return score_metrics(predict_proba(model, X, layout), (y >= 0.5).astype(int),
                         model.config.threshold)


# ---------------------------------------------------------------------------
# Random search
# ---------------------------------------------------------------------------

def stratified_folds(y, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Indices of ``k`` validation folds, classes dealt round-robin after shuffling."""
    y = (np.asarray(y) >= 0.5).astype(int)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))
        for i, r in enumerate(idx):
            folds[(i + offset) % k].append(r)
        offset += idx.size
    if min(len(f) for f in folds) == 0 or min(np.bincount(y, minlength=2)) < k:
        raise ValueError(f"dataset cannot be split into {k} stratified folds")
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


@dataclass
class SearchResult:
    best_config: GbdtConfig
    best_score: float
    trials: list = field(default_factory=list)   # (config, fold accuracies)

    @property
    def trial_means(self) -> np.ndarray:
        return np.array([np.mean(s) for _, s in self.trials])


def cross_validate(X, y, config: GbdtConfig, folds, sample_weights=None) -> list[float]:
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    scores = []
    for val in folds:
        train = np.setdiff1d(np.arange(y.size), val)
        sw = None if sample_weights is None else np.asarray(sample_weights)[train]
        m = train_gbdt(X[train], y[train], config, sw)
        scores.append(evaluate(m, X[val], y[val])["accuracy"])
    return scores


def random_search(X, y, n_trials: int = 50, seed: int = 0, k: int = 5,
                  sample_weights=None) -> SearchResult:
    """Seeded random search with stratified k-fold CV accuracy.

    Trial ``t`` draws its configuration from the master generator and its
    model seed from child ``t`` of ``SeedSequence(seed)``; the folds are fixed
    for all trials.  Ties keep the earliest trial.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    ss = np.random.SeedSequence(seed)
    fold_seq, cfg_seq, *trial_seqs = ss.spawn(n_trials + 2)
    folds = stratified_folds(y, k, np.random.default_rng(fold_seq))
    cfg_rng = np.random.default_rng(cfg_seq)
    result = None
    for t in range(n_trials):
        cfg = sample_config(cfg_rng, seed=int(trial_seqs[t].generate_state(1)[0]))
        scores = cross_validate(X, y, cfg, folds, sample_weights)
        mean = float(np.mean(scores))
        if result is None:
            result = SearchResult(cfg, mean)
        elif mean > result.best_score:
            result.best_config, result.best_score = cfg, mean
        result.trials.append((cfg, scores))
    return result


def with_seed(config: GbdtConfig, seed: int) -> GbdtConfig:
    return replace(config, seed=seed)


def cross_val_predict(X, y, config: GbdtConfig, folds) -> np.ndarray:
    """Out-of-fold probabilities for every row."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    out = np.empty(y.size)
    for val in folds:
        train = np.setdiff1d(np.arange(y.size), val)
        out[val] = predict_proba(train_gbdt(X[train], y[train], config), X[val])
    return out
