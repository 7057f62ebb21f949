"""
Domain-incremental continual learning with experience replay.

The classifier is a tree ensemble, so a domain step retrains it on the
current domain's training rows plus the replay buffer (buffer rows weighted by
``beta``).  Buffers hold fused feature vectors, never raw waveforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import clf
from .datagen import SamplingSpec
from .fuse import Dataset, FeatureVector

SCENARIO_ORDER = ("Peak", "OffPeak", "SummerBoom", "WinterBust", "Balanced")
_ANY = ("Empty", "Half", "Full", "Unbalance1", "Unbalance2", "Unbalance3")
_NOT_FULL = ("Empty", "Half", "Unbalance1", "Unbalance2", "Unbalance3")


class ProtocolError(RuntimeError):
    pass


class UndefinedMetricError(ZeroDivisionError):
    def __init__(self, domains):
        super().__init__(f"R_initial is zero for domain(s) {list(domains)}")
        self.domains = list(domains)


@dataclass(frozen=True)
class DomainScenario:
    id: str
    sampling: SamplingSpec
    order_index: int = 0


def _scenarios():
    ranges = {
        "Peak": ({"Laagrss": (80.0, 120.0), "Alfa": (140.0, 220.0)}, _ANY),
        "OffPeak": ({"Laagrss": (40.0, 80.0), "Alfa": (40.0, 120.0)}, _ANY),
        "SummerBoom": ({"Laagrss": (90.0, 120.0), "Alfa": (160.0, 220.0)}, ("Full",)),
        "WinterBust": ({"Laagrss": (40.0, 60.0), "Alfa": (40.0, 80.0)}, _NOT_FULL),
        "Balanced": ({"Laagrss": (60.0, 100.0), "Alfa": (90.0, 160.0)}, _ANY),
    }
    return {k: DomainScenario(k, SamplingSpec(speed_ranges=r, loads=l), i)
            for i, (k, (r, l)) in enumerate(ranges.items())}


SCENARIOS = _scenarios()


def scenario_sequence(order=SCENARIO_ORDER) -> list[DomainScenario]:
    out = []
    for i, name in enumerate(order):
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}")
        s = SCENARIOS[name]
        out.append(DomainScenario(s.id, s.sampling, i))
    return out


# ---------------------------------------------------------------------------
# Buffer
# ---------------------------------------------------------------------------

class Policy(str, Enum):
    RS = "rs"
    LB = "lb"
    PRS = "prs"
    PLB = "plb"

    @property
    def predicted_labels(self) -> bool:
        return self in (Policy.PRS, Policy.PLB)

    @property
    def loss_based(self) -> bool:
        return self in (Policy.LB, Policy.PLB)


@dataclass
class BufferEntry:
    item: FeatureVector
    stored_label: float
    stored_loss: float = 0.0
    insertion_count: int = 0


@dataclass
class MemoryBuffer:
    capacity: int
    policy: Policy = Policy.RS
    entries: list[BufferEntry] = field(default_factory=list)

    def __post_init__(self):
        self.policy = Policy(self.policy)
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity


def reservoir_insert(buffer: MemoryBuffer, item: BufferEntry, n: int,
                     rng: np.random.Generator) -> MemoryBuffer:
    """Reservoir step for the ``n``-th stream item (1-based).

    Below capacity the item is appended; otherwise it replaces a uniformly
    chosen entry with probability ``capacity / n``.
    """
    if n < 1:
        raise ValueError("stream count n must be >= 1")
    if buffer.capacity == 0:
        return buffer
    if len(buffer.entries) < buffer.capacity:
        buffer.entries.append(item)
        return buffer
    j = int(rng.integers(n))
    if j < buffer.capacity:
        buffer.entries[j] = item
    return buffer


def reservoir_extend(buffer: MemoryBuffer, items, seen: int,
                     rng: np.random.Generator) -> MemoryBuffer:
    """Reservoir steps for a batch of items after ``seen`` earlier stream items.

    Same distribution as calling :func:`reservoir_insert` item by item, with
    the replacement slots drawn in one vectorized call.
    """
    items = list(items)
    if buffer.capacity == 0 or not items:
        return buffer
    take = min(max(buffer.capacity - len(buffer.entries), 0), len(items))
    buffer.entries.extend(items[:take])
    rest = items[take:]
    if rest:
        n = seen + take + 1 + np.arange(len(rest))
        slots = rng.integers(0, n)
        for item, j in zip(rest, slots):
            if j < buffer.capacity:
                buffer.entries[j] = item
    return buffer


def loss_based_select(losses, tau: float, capacity: int) -> np.ndarray:
    """Indices of the candidates kept: loss above ``tau``, the largest ``capacity`` of them.

    Ties in loss keep the candidate that comes first (earlier insertion).
    Returned indices are in candidate order.
    """
    losses = np.asarray(losses, dtype=float)
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    above = np.flatnonzero(losses > tau)
    if above.size > capacity:
        order = np.argsort(-losses[above], kind="stable")
        above = np.sort(above[order[:capacity]])
    return above


def _row_loss(p, target):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return -(target * np.log(p) + (1 - target) * np.log(1 - p))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerformanceMatrix:
    """``R[0, i]`` is the pre-stream performance on domain i, ``R[j, i]`` after domain j."""

    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "R", R)
        if R.ndim != 2 or R.shape[0] != R.shape[1] + 1:
            raise ValueError("R must have shape (N+1, N)")
        if np.any(R < 0) or np.any(R > 1):
            raise ValueError("performance entries must lie in [0, 1]")

    @property
    def n_domains(self) -> int:
        return self.R.shape[1]


def _R(R):
    R = R.R if isinstance(R, PerformanceMatrix) else np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] + 1:
        raise ValueError("R must have shape (N+1, N)")
    return R


def fwt(R) -> float:
    """(1/(N-1)) * sum_{i=1}^{N-1} (R[0,i] - R[i,i]); 0 when N = 1."""
    R = _R(R)
    N = R.shape[1]
    if N < 2:
        return 0.0
    return float(sum(R[0, i - 1] - R[i, i - 1] for i in range(1, N)) / (N - 1))


def bwt(R) -> float:
    """(1/(N(N-1))) * sum_{i<j} (R[j,i] - R[i,i]); 0 when N = 1."""
    R = _R(R)
    N = R.shape[1]
    if N < 2:
        return 0.0
    total = sum(R[j, i - 1] - R[i, i - 1] for i in range(1, N) for j in range(i + 1, N + 1))
    return float(total / (N * (N - 1)))


def _diag(R):
    N = R.shape[1]
    return np.array([R[i + 1, i] for i in range(N)])


def im(R, R_joint) -> float:
    """(1/N) * sum_i (R_joint[i] - R[i,i]).

    ``R_joint`` is either a length-N vector or another (N+1, N) matrix whose
    diagonal is used.
    """
    R = _R(R)
    Rj = np.asarray(R_joint.R if isinstance(R_joint, PerformanceMatrix) else R_joint, dtype=float)
    joint = _diag(Rj) if Rj.ndim == 2 else Rj
    if joint.size != R.shape[1]:
        raise ValueError("R_joint must have one entry per domain")
    return float(np.mean(joint - _diag(R)))


def kgr(R, R_initial=None, use_row0: bool = False) -> float:
    """(1/N) * sum_i R[N,i] / R_initial[i].

    ``R_initial`` defaults to the diagonal ``R[i,i]``; ``use_row0`` selects
    ``R[0,i]`` instead.
    """
    R = _R(R)
    if R_initial is None:
        R_initial = R[0] if use_row0 else _diag(R)
    R_initial = np.asarray(R_initial, dtype=float)
    bad = np.flatnonzero(R_initial == 0)
    if bad.size:
        raise UndefinedMetricError(bad + 1)
    return float(np.mean(R[-1] / R_initial))


def cl_metrics(R, R_joint) -> dict:
    return {"fwt": fwt(R), "bwt": bwt(R), "im": im(R, R_joint), "kgr": kgr(R)}


# ---------------------------------------------------------------------------
# Stream
# ---------------------------------------------------------------------------

STRATEGIES = ("baseline", "rs", "lb", "prs", "plb")


@dataclass
class StreamResult:
    matrix: PerformanceMatrix
    R_joint: np.ndarray
    metrics: dict
    final_model: clf.GbdtModel
    buffer_sizes: list[int]
    strategy: str
    capacity: int


def split_domain(ds: Dataset, rng: np.random.Generator, test_fraction: float = 0.2):
    """Stratified train/test split of one domain's rows."""
    y = ds.y
    test = []
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == c))
        test += list(idx[:int(round(idx.size * test_fraction))])
    test = np.sort(np.array(test, dtype=int))
    train = np.setdiff1d(np.arange(len(ds)), test)
    if train.size == 0 or test.size == 0:
        raise ProtocolError("domain too small to split")
    return ds.subset(train), ds.subset(test)


def _fit(X, targets, weights, config):
    """Fit on soft targets by weighted duplication (p on class 1, 1 - p on class 0)."""
    X = np.asarray(X)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    hard = (targets == 0) | (targets == 1)
    soft = ~hard
    Xs = np.concatenate([X[hard], X[soft], X[soft]])
    ys = np.concatenate([targets[hard], np.ones(soft.sum()), np.zeros(soft.sum())])
    ws = np.concatenate([weights[hard], weights[soft] * targets[soft],
                         weights[soft] * (1 - targets[soft])])
    return clf.train_gbdt(Xs, ys, config, ws)


def _accuracy(model, ds: Dataset) -> float:
    return float(np.mean(clf.predict(model, ds.X) == ds.y))


def run_domain_stream(domains, strategy: str = "rs", capacity: int = 200, beta: float = 1.0,
                      config: clf.GbdtConfig = clf.GbdtConfig(), seed: int = 0,
                      test_fraction: float = 0.2) -> StreamResult:
    """Stream over per-domain datasets (already fused with a frozen representation).

    Row 0 of R holds the accuracy of an isolated model trained on each domain
    alone.  ``R_joint[i]`` is the accuracy on domain i of a model trained on the
    union of the training splits of domains 1..i.  ``baseline`` retrains on the
    union of every training split seen so far and ignores the buffer.
    """
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    domains = list(domains)
    if not domains:
        raise ProtocolError("no domains")
    for d, ds in enumerate(domains):
        if len(ds) == 0:
            raise ProtocolError(f"domain {d + 1} has no rows")
    N = len(domains)
    ss = np.random.SeedSequence(seed)
    split_seq, buf_seq, model_seq = ss.spawn(3)
    split_rng = np.random.default_rng(split_seq)
    buf_rng = np.random.default_rng(buf_seq)
    model_seeds = model_seq.generate_state(3 * N + 1)
    splits = [split_domain(ds, split_rng, test_fraction) for ds in domains]

    def cfg(k):
        return clf.with_seed(config, int(model_seeds[k]))

    R = np.zeros((N + 1, N))
    R_joint = np.zeros(N)
    for i, (tr, te) in enumerate(splits):
        R[0, i] = _accuracy(_fit(tr.X, tr.y, np.ones(len(tr)), cfg(N + i)), te)
        union = [splits[k][0] for k in range(i + 1)]
        Xu = np.concatenate([u.X for u in union])
        yu = np.concatenate([u.y for u in union])
        R_joint[i] = _accuracy(_fit(Xu, yu, np.ones(yu.size), cfg(2 * N + i)), te)

    buffer = MemoryBuffer(capacity, Policy(strategy) if strategy != "baseline" else Policy.RS)
    sizes = []
    seen = 0
    model = None
    for t, (tr, _) in enumerate(splits):
        if strategy == "baseline":
            union = [splits[k][0] for k in range(t + 1)]
            X = np.concatenate([u.X for u in union])
            targets = np.concatenate([u.y for u in union]).astype(float)
            weights = np.ones(targets.size)
        else:
            X, targets, weights = tr.X, tr.y.astype(float), np.ones(len(tr))
            if buffer.entries:
                X = np.concatenate([X, np.stack([e.item.model_input() for e in buffer.entries])])
                targets = np.concatenate([targets, [e.stored_label for e in buffer.entries]])
                weights = np.concatenate([weights, np.full(len(buffer), beta)])
        previous = model
        model = _fit(X, targets, weights, cfg(t))

        if strategy != "baseline":
            label_model = previous if previous is not None else model
            new_labels = (clf.predict_proba(label_model, tr.X) if buffer.policy.predicted_labels
                          else tr.y.astype(float))
            new_entries = [BufferEntry(r, float(l), 0.0, seen + k + 1)
                           for k, (r, l) in enumerate(zip(tr.rows, new_labels))]
            if buffer.policy.loss_based:
                cands = buffer.entries + new_entries
                p = clf.predict_proba(model, np.stack([e.item.model_input() for e in cands]))
                losses = _row_loss(p, np.array([e.stored_label for e in cands]))
                for e, l in zip(cands, losses):
                    e.stored_loss = float(l)
                tau = float(np.median(losses[len(buffer.entries):]))
                keep = loss_based_select(losses, tau, capacity)
                buffer.entries = [cands[k] for k in keep]
            else:
                reservoir_extend(buffer, new_entries, seen, buf_rng)
            seen += len(new_entries)
        if len(buffer) > capacity:
            raise AssertionError("buffer exceeded its capacity")
        sizes.append(len(buffer))
        for i, (_, te) in enumerate(splits):
            R[t + 1, i] = _accuracy(model, te)

    matrix = PerformanceMatrix(R)
    return StreamResult(matrix, R_joint, cl_metrics(matrix, R_joint), model, sizes,
                        strategy, capacity)
