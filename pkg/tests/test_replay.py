"""Replay buffers, the domain stream and continual-learning metrics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from wayside import clf, replay
from wayside.fuse import Dataset, FeatureVector
from wayside.replay import (MemoryBuffer, PerformanceMatrix, Policy, bwt, fwt, im, kgr,
                            loss_based_select, reservoir_extend, reservoir_insert,
                            run_domain_stream)


# -- straight-from-formula oracles (1-based indices as printed) -------------------

def oracle_fwt(R):
    N = R.shape[1]
    if N < 2:
        return 0.0
    r = lambda j, i: R[j][i - 1]
    return sum(r(0, i) - r(i, i) for i in range(1, N)) / (N - 1)


def oracle_bwt(R):
    N = R.shape[1]
    if N < 2:
        return 0.0
    r = lambda j, i: R[j][i - 1]
    return sum(r(j, i) - r(i, i) for j in range(1, N + 1) for i in range(1, j)) / (N * (N - 1))


def oracle_im(R, joint):
    N = R.shape[1]
    return sum(joint[i - 1] - R[i][i - 1] for i in range(1, N + 1)) / N


def oracle_kgr(R):
    N = R.shape[1]
    return sum(R[N][i - 1] / R[i][i - 1] for i in range(1, N + 1)) / N


matrices = st.integers(1, 6).flatmap(
    lambda n: arrays(float, (n + 1, n), elements=st.floats(0.05, 1.0)))


@given(matrices)
def test_metrics_match_formula(R):
    joint = R[0]
    assert abs(fwt(R) - oracle_fwt(R)) <= 1e-12
    assert abs(bwt(R) - oracle_bwt(R)) <= 1e-12
    assert abs(im(R, joint) - oracle_im(R, joint)) <= 1e-12
    assert abs(kgr(R) - oracle_kgr(R)) <= 1e-12


def test_metric_identities():
    R = np.full((6, 5), 0.8)
    assert fwt(R) == 0 and bwt(R) == 0 and im(R, R) == 0 and kgr(R) == 1
    R2 = np.array([[0.5, 0.5], [0.9, 0.6], [0.8, 0.7]])
    assert bwt(R2) == pytest.approx(-0.05, abs=1e-15)


def test_single_domain_vacuous():
    R = np.array([[0.4], [0.9]])
    assert fwt(R) == 0 and bwt(R) == 0


def test_kgr_undefined_lists_domains():
    R = np.array([[0.5, 0.5], [0.0, 0.6], [0.8, 0.0]])
    with pytest.raises(replay.UndefinedMetricError) as info:
        kgr(R)
    assert info.value.domains == [1, 2]
    assert kgr(np.array([[0.5, 0.5], [0.9, 0.6], [0.8, 0.7]]), use_row0=True) == pytest.approx(1.5)


def test_performance_matrix_validation():
    with pytest.raises(ValueError):
        PerformanceMatrix(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PerformanceMatrix(np.full((3, 2), 1.5))


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.permutations(list(range(n))), arrays(float, n, elements=st.floats(-0.1, 0.1)),
    arrays(float, n, elements=st.floats(0.5, 1.0)))))
def test_metrics_invariant_under_domain_relabeling(args):
    perm, offset, scale = args
    N = len(perm)
    perm = np.array(perm)
    # R[j, i] depends only on the stream position relation of j and i plus a
    # per-domain offset (additive metrics) or scale (ratio metric)
    j = np.arange(N + 1)[:, None]
    i = np.arange(1, N + 1)[None, :]
    base = np.where(j == 0, 0.5, np.where(j == i, 0.8, np.where(j > i, 0.7, 0.6)))
    for h, hp in ((offset, offset[perm]),):
        A, B = base + h, base + hp
        joint_a, joint_b = 0.85 + h, 0.85 + hp
        assert fwt(A) == pytest.approx(fwt(B), abs=1e-12)
        assert bwt(A) == pytest.approx(bwt(B), abs=1e-12)
        assert im(A, joint_a) == pytest.approx(im(B, joint_b), abs=1e-12)
    assert kgr(base * scale) == pytest.approx(kgr(base * scale[perm]), abs=1e-12)


# -- reservoir ------------------------------------------------------------------------

def test_reservoir_small_cases():
    kept = 0
    rng = np.random.default_rng(0)
    for _ in range(20_000):
        b = MemoryBuffer(2)
        for n in range(1, 5):
            reservoir_insert(b, n, n, rng)
        kept += 1 in b.entries
    assert abs(kept / 20_000 - 0.5) < 0.015
    b = MemoryBuffer(5)
    for n in range(1, 4):
        reservoir_insert(b, n, n, rng)
    assert b.entries == [1, 2, 3]
    with pytest.raises(ValueError):
        reservoir_insert(b, 9, 0, rng)


def test_reservoir_total_count_and_batch_equivalence():
    trials, n, k = 400, 500, 20
    seq = np.zeros(n)
    bat = np.zeros(n)
    for t in range(trials):
        rng = np.random.default_rng(t)
        b = MemoryBuffer(k)
        for m in range(1, n + 1):
            reservoir_insert(b, m - 1, m, rng)
        seq[b.entries] += 1
        b2 = MemoryBuffer(k)
        reservoir_extend(b2, range(n // 2), 0, np.random.default_rng(10_000 + t))
        reservoir_extend(b2, range(n // 2, n), n // 2, np.random.default_rng(20_000 + t))
        bat[b2.entries] += 1
    sigma = np.sqrt(trials * k * (1 - k / n))
    for counts in (seq, bat):
        assert counts.sum() == trials * k
        # late and early halves hold k/2 on average
        assert abs(counts[: n // 2].sum() / trials - k / 2) < 3 * sigma / trials + 1


def test_zero_capacity_buffer():
    b = MemoryBuffer(0)
    reservoir_insert(b, 1, 1, np.random.default_rng())
    reservoir_extend(b, [1, 2], 1, np.random.default_rng())
    assert len(b) == 0


# -- loss-based selection ------------------------------------------------------------------

def test_loss_based_examples():
    assert list(loss_based_select([0.1, 0.9, 0.5], 0.4, 1)) == [1]
    assert loss_based_select([0.1, 0.9], np.inf, 5).size == 0
    assert list(loss_based_select([0.1, 0.9], -np.inf, 5)) == [0, 1]
    assert list(loss_based_select([0.5, 0.5, 0.5], 0.0, 2)) == [0, 1]


@given(st.lists(st.floats(0, 5), min_size=0, max_size=40), st.floats(0, 5), st.integers(0, 20))
def test_loss_based_subset_property(losses, tau, cap):
    keep = loss_based_select(losses, tau, cap)
    L = np.array(losses)
    assert len(keep) <= cap
    assert len(set(keep.tolist())) == len(keep)
    if len(keep):
        assert np.all(L[keep] > tau)
    dropped = np.setdiff1d(np.flatnonzero(L > tau), keep)
    if len(keep) and dropped.size:
        assert L[keep].min() >= L[dropped].max()


def test_policies():
    assert Policy("prs").predicted_labels and not Policy("rs").predicted_labels
    assert Policy("lb").loss_based and Policy("plb").loss_based and not Policy("prs").loss_based


# -- stream -------------------------------------------------------------------------------

def make_domains(n_domains=5, rows=80, seed=0):
    """Each domain moves the decision boundary on feature 0; feature 1 names the domain."""
    r = np.random.default_rng(seed)
    out = []
    for d in range(n_domains):
        x0 = r.uniform(-1, 1, rows)
        y = (x0 > -0.6 + 0.3 * d).astype(int)
        X = np.c_[x0, np.full(rows, d), r.normal(size=rows)]
        lay = ("a", "b", "c")
        out.append(Dataset([FeatureVector(x, lay, np.ones(3, bool), int(l), domain_id=d)
                            for x, l in zip(X, y)]))
    return out


@pytest.fixture(scope="module")
def domains():
    return make_domains()


CFG = clf.GbdtConfig(n_estimators=50, max_depth=3)


@pytest.mark.parametrize("strategy", replay.STRATEGIES)
def test_stream_shapes_and_capacity(domains, strategy):
    res = run_domain_stream(domains, strategy, capacity=30, config=CFG, seed=1)
    assert res.matrix.R.shape == (6, 5)
    assert np.all((res.matrix.R >= 0) & (res.matrix.R <= 1))
    assert max(res.buffer_sizes) <= 30
    assert set(res.metrics) == {"fwt", "bwt", "im", "kgr"}


def test_stream_deterministic(domains):
    a = run_domain_stream(domains, "plb", 30, config=CFG, seed=4)
    b = run_domain_stream(domains, "plb", 30, config=CFG, seed=4)
    assert np.array_equal(a.matrix.R, b.matrix.R)


def test_beta_zero_equals_sequential(domains):
    a = run_domain_stream(domains, "rs", 40, beta=0.0, config=CFG, seed=2)
    b = run_domain_stream(domains, "rs", 0, beta=1.0, config=CFG, seed=2)
    assert np.array_equal(a.matrix.R, b.matrix.R)


def test_baseline_retains_first_domain(domains):
    base = run_domain_stream(domains, "baseline", 0, config=CFG, seed=3)
    seq = run_domain_stream(domains, "rs", 0, config=CFG, seed=3)
    assert base.matrix.R[5, 0] >= seq.matrix.R[5, 0]


def test_single_domain_stream(domains):
    res = run_domain_stream(domains[:1], "rs", 10, config=CFG, seed=0)
    assert res.matrix.R.shape == (2, 1) and res.metrics["fwt"] == 0 and res.metrics["bwt"] == 0


def test_protocol_errors(domains):
    with pytest.raises(replay.ProtocolError):
        run_domain_stream([], "rs")
    with pytest.raises(replay.ProtocolError):
        run_domain_stream([domains[0], Dataset([])], "rs", config=CFG)


def test_soft_label_fit_matches_duplication():
    X = np.random.default_rng(0).normal(size=(40, 2))
    t = np.r_[np.zeros(15), np.ones(15), np.full(10, 0.7)]
    m = replay._fit(X, t, np.ones(40), CFG)
    Xd = np.r_[X[:30], X[30:], X[30:]]
    yd = np.r_[t[:30], np.ones(10), np.zeros(10)]
    wd = np.r_[np.ones(30), np.full(10, 0.7), np.full(10, 1 - 0.7)]
    m2 = clf.train_gbdt(Xd, yd, CFG, wd)
    assert m.to_json() == m2.to_json()


def test_scenarios_orderings():
    sc = replay.SCENARIOS
    summer, winter = sc["SummerBoom"].sampling, sc["WinterBust"].sampling
    for name in ("Laagrss", "Alfa"):
        assert summer.speed_ranges[name][0] >= max(v[1] for k, v in winter.speed_ranges.items() if k == name)
    assert summer.loads == ("Full",) and "Full" not in winter.loads
    assert [s.id for s in replay.scenario_sequence()] == list(replay.SCENARIO_ORDER)
    with pytest.raises(ValueError):
        replay.scenario_sequence(["Nope"])
