"""Friedman, Shaffer and confidence intervals."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from wayside import stats
from wayside.stats import (RankBlockTable, confidence_interval, format_ci, friedman,
                           friedman_exact_p, parse_ci, shaffer_multipliers, shaffer_posthoc)

FIXED = np.array([[1, 2, 3]] * 3, float)


def oracle_friedman(scores):
    """Textbook tie-corrected statistic from rank sums."""
    n, k = scores.shape
    ranks = np.array([scipy.stats.rankdata(r) for r in scores])
    R = ranks.sum(axis=0)
    chi = 12 / (n * k * (k + 1)) * sum(r * r for r in R) - 3 * n * (k + 1)
    T = sum(sum(c ** 3 - c for c in np.unique(r, return_counts=True)[1]) for r in ranks)
    return chi / (1 - T / (n * k * (k * k - 1)))


def test_gammaincc_against_scipy():
    worst = 0.0
    for a in (0.5, 1.0, 1.5, 2.0, 3.5, 10.0, 30.0):
        for x in np.r_[np.linspace(0.01, 5, 40), np.linspace(5, 80, 40)]:
            ref = scipy.special.gammaincc(a, x)
            if ref > 1e-280:
                worst = max(worst, abs(stats.gammaincc(a, x) - ref) / ref)
    assert worst < 1e-10
    assert stats.gammaincc(2.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        stats.gammaincc(0.0, 1.0)


def test_fixed_ranking_example():
    stat, p = friedman(FIXED)
    assert stat == pytest.approx(6.0, abs=1e-12)
    assert p == pytest.approx(math.exp(-3), abs=1e-12)


def test_identical_columns_vs_all_tied():
    latin = np.array([[1, 2, 3], [2, 3, 1], [3, 1, 2]], float)
    stat, p = friedman(latin)
    assert stat == 0.0 and p == 1.0
    with pytest.raises(stats.DegenerateDataError):
        friedman(np.ones((4, 3)))


def test_friedman_matches_scipy(rng):
    for _ in range(50):
        S = rng.integers(0, 4, size=(int(rng.integers(3, 12)), int(rng.integers(3, 6)))).astype(float)
        if all(len(set(r)) == 1 for r in S):
            continue
        ref = scipy.stats.friedmanchisquare(*S.T)
        stat, p = friedman(S)
        assert stat == pytest.approx(ref.statistic, rel=1e-10, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


@given(arrays(float, st.tuples(st.integers(2, 8), st.integers(3, 5)), elements=st.floats(0, 1)))
def test_friedman_matches_oracle(S):
    if all(len(set(r)) == 1 for r in S):
        return
    assert abs(friedman(S)[0] - oracle_friedman(S)) <= 1e-9


@given(arrays(float, (6, 4), elements=st.floats(0.01, 10)))
def test_friedman_invariant_under_monotone_transform(S):
    if all(len(set(r)) == 1 for r in S):
        return
    assert friedman(S)[0] == friedman(np.log(S) * 3 + 7)[0]


def test_rank_sums_per_block(rng):
    t = RankBlockTable(rng.integers(0, 3, size=(10, 4)))
    assert np.allclose(t.ranks.sum(axis=1), 4 * 5 / 2)


def test_exact_p_enumeration():
    # one block order forced, full enumeration is 6**3 permutations
    assert friedman_exact_p(FIXED) == pytest.approx(6 / 216)
    assert friedman_exact_p(np.array([[1, 2, 3], [2, 3, 1], [3, 1, 2]], float)) == 1.0


def test_input_validation():
    with pytest.raises(ValueError):
        friedman(np.ones((3, 2)))
    with pytest.raises(ValueError):
        RankBlockTable(np.ones(3))


# -- Shaffer --------------------------------------------------------------------------

def test_shaffer_multipliers():
    assert shaffer_multipliers(3) == [3, 1, 1]
    assert shaffer_multipliers(4) == [6, 3, 3, 3, 2, 1]
    assert shaffer_multipliers(5) == [10, 6, 6, 6, 6, 4, 4, 3, 2, 1]


def test_shaffer_requires_rejection_and_k():
    with pytest.raises(ValueError):
        shaffer_posthoc(np.array([[1, 2, 3], [2, 3, 1], [3, 1, 2]], float))
    with pytest.raises(ValueError):
        shaffer_posthoc(np.ones((5, 2)), require_rejection=False)


def test_identical_columns_adjusted_one(rng):
    S = rng.normal(size=(12, 4))
    S[:, 1] = S[:, 0]
    res = shaffer_posthoc(S, require_rejection=False)
    assert res.matrix()[0, 1] == 1.0


@given(arrays(float, st.tuples(st.integers(3, 10), st.integers(3, 5)), elements=st.floats(0, 1)))
def test_shaffer_adjusted_bounds_and_monotone(S):
    res = shaffer_posthoc(S, require_rejection=False)
    assert np.all(res.adjusted_p >= res.raw_p - 1e-15)
    assert np.all(res.adjusted_p <= 1.0)
    order = np.argsort(res.raw_p, kind="stable")
    assert np.all(np.diff(res.adjusted_p[order]) >= 0)


def test_shaffer_z_formula():
    S = np.tile([1.0, 2.0, 3.0, 4.0], (10, 1))
    res = shaffer_posthoc(S)
    se = math.sqrt(4 * 5 / (6 * 10))
    a, b = res.pairs.index((0, 3)), res.pairs.index((0, 1))
    assert res.z[a] == pytest.approx(-3 / se)
    assert res.raw_p[b] == pytest.approx(math.erfc((1 / se) / math.sqrt(2)))


# -- confidence intervals -----------------------------------------------------------

def test_confidence_interval_examples():
    assert confidence_interval([0.5, 0.5, 0.5])[1] == 0.0
    m, h = confidence_interval([0, 1])
    assert m == 0.5 and h == pytest.approx(1.96 * 0.70710678 / 1.41421356, rel=1e-7)
    with pytest.raises(ValueError):
        confidence_interval([1.0])


def test_format_roundtrip():
    s = format_ci(0.93, 0.01)
    assert s == ".93 ± .01"
    assert parse_ci(s) == (0.93, 0.01)
    assert format_ci(1.0, 0.0) == "1.00 ± .00"
