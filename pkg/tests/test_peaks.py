"""Peak detectors, prominence and axle semantics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wayside import peaks
from wayside.peaks import (PeakSet, axle_count_accuracy, detect, detect_dp, detect_pd, detect_sd,
                           detect_tb, extract_semantics, is_local_max, prominence)
from wayside.synth import ALFA, LAAGRSS, LoadScheme, PassageSpec, synthesize_passage

signals = st.lists(st.integers(0, 4), min_size=3, max_size=20).map(lambda v: np.array(v, float))


def brute_prominence(x, n):
    """Peak height minus the higher of the two lowest points reached before higher terrain."""
    h = x[n]
    i = n
    left = h
    while i - 1 >= 0 and x[i - 1] <= h:
        i -= 1
        left = min(left, x[i])
    j = n
    right = h
    while j + 1 < len(x) and x[j + 1] <= h:
        j += 1
        right = min(right, x[j])
    return h - max(left, right)


def brute_local_maxima(x):
    out = []
    for n in range(1, len(x) - 1):
        if x[n] <= x[n - 1]:
            continue
        j = n
        while j + 1 < len(x) and x[j + 1] == x[n]:
            j += 1
        if j + 1 < len(x) and x[j + 1] < x[n]:
            out.append(n)
    return np.array(out, dtype=int)


def clean_rec(train=LAAGRSS, speed=80.0, load=LoadScheme.FULL):
    return synthesize_passage(PassageSpec(train, speed, load, (), snr_db=None))


# -- prominence ------------------------------------------------------------------

def test_prominence_hand_trace():
    x = np.array([0, 3, 1, 2, 0], float)
    assert prominence(x, 1) == 3
    assert prominence(x, 3) == 1
    with pytest.raises(ValueError):
        prominence(x, 2)


def test_prominence_matches_brute_force_random():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 200:
        x = rng.normal(size=rng.integers(5, 40))
        for n in brute_local_maxima(x):
            assert abs(prominence(x, n) - brute_prominence(x, n)) <= 1e-9
            checked += 1


def test_constant_signal_has_no_peaks():
    x = np.ones(10)
    assert peaks.local_maxima(x).size == 0
    assert len(detect_sd(x, 0.0)) == 0


# -- detectors ---------------------------------------------------------------------

def test_tb_examples():
    assert len(detect_tb(np.zeros(10), 0.5)) == 0
    t = np.linspace(-1, 1, 201)
    pulse = np.exp(-0.5 * (t / 0.1) ** 2)
    ps = detect_tb(pulse, 0.5)
    assert list(ps.indices) == [100]
    rec = clean_rec()
    assert len(detect_tb(rec.strain, 0.8)) == 10


def test_pd_examples():
    assert len(detect_pd(np.arange(50.0), 5, 0.1)[0]) == 0
    x = np.sin(2 * np.pi * np.arange(400) / 50)
    ps, minima = detect_pd(x, 10, 0.5)
    assert len(ps) == 8
    assert len(detect_pd(x, 10, 5.0)[0]) == 0
    with pytest.raises(ValueError):
        detect_pd(x, 400, 0.1)
    with pytest.raises(ValueError):
        detect_pd(x, 0, 0.1)


def test_dp_examples():
    x = np.array([0, 1, 0], float)
    assert list(detect_dp(x, 0.5).indices) == [1]
    assert len(detect_dp(x, 2.0)) == 0
    assert list(detect_dp(np.array([0, 1, 1, 0], float), 0.5).indices) == [1]


def test_sd_examples():
    x = np.array([0, 3, 1, 2, 0], float)
    assert list(detect_sd(x, 2).indices) == [1]
    assert list(detect_sd(x, 0.5).indices) == [1, 3]
    assert len(detect_sd(clean_rec(ALFA, 150.0).strain, 0.2 * 40)) == 12


@given(signals)
def test_sd_zero_prominence_returns_every_local_max(x):
    assert np.array_equal(detect_sd(x, 0.0).indices, brute_local_maxima(x))


@given(signals, st.sampled_from(peaks.ALGORITHMS), st.floats(0, 1))
def test_outputs_are_local_maxima(x, alg, s):
    if alg == "PD" and x.size <= 2:
        return
    ps = detect(x, alg, s, lookahead=1)
    for n in ps.indices:
        assert is_local_max(x, int(n))
    assert np.all(np.diff(ps.indices) > 0)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=8, max_size=60),
       st.sampled_from(peaks.ALGORITHMS))
def test_count_monotone_in_sensitivity(values, alg):
    x = np.array(values)
    counts = [len(detect(x, alg, s, lookahead=2)) for s in np.linspace(0, 1, 11)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_peakset_rejects_unsorted():
    with pytest.raises(ValueError):
        PeakSet(np.array([3, 1]), np.array([1.0, 2.0]), "SD", 0.5)


# -- semantics -------------------------------------------------------------------

def test_extract_semantics_empty():
    sem = extract_semantics(PeakSet(np.empty(0, int), np.empty(0), "SD", 0.5), 2000)
    assert sem.Z == 0 and sem.X.size == 0 and sem.Y.size == 0


@pytest.mark.parametrize("alg", peaks.ALGORITHMS)
def test_semantics_match_truth_times(alg):
    rec = clean_rec(ALFA, 120.0)
    sem = extract_semantics(detect(rec.strain, alg, 0.8), rec.sample_rate)
    assert sem.Z == 12
    assert np.all(np.abs(sem.X - rec.wheel_pass_times) <= 2 / rec.sample_rate)
    err = peaks.match_to_truth(sem.X, rec.wheel_pass_times)
    assert not np.isnan(err).any()


def test_unbalanced_heavy_side_larger_y():
    rec = clean_rec(LAAGRSS, 80.0, LoadScheme.UNBALANCE2)
    sem = extract_semantics(detect(rec.strain, "SD", 0.8), rec.sample_rate)
    side = LAAGRSS.side_of_axle()
    assert sem.Y[side == 0].mean() > sem.Y[side == 1].mean()


def _sem(times):
    t = np.asarray(times, float)
    return peaks.SemanticFeatures(len(t), t, np.ones(len(t)))


def test_axle_count_accuracy_cases():
    truth_t = np.asarray(LAAGRSS.axle_positions) / 20.0
    r = axle_count_accuracy(_sem(truth_t), LAAGRSS)
    assert (r.count_match, r.grouping_match) == (True, True)
    r = axle_count_accuracy(_sem(np.delete(truth_t, 3)), LAAGRSS)
    assert (r.count_match, r.grouping_match) == (False, False)
    # merge a bogie pair into one wheel and add a spurious isolated one
    adv = np.sort(np.r_[np.delete(truth_t, 4), truth_t[-1] + 0.5])
    r = axle_count_accuracy(_sem(adv), LAAGRSS)
    assert (r.count_match, r.grouping_match) == (True, False)


def test_group_sizes_rule():
    assert peaks.group_sizes([0, 1, 1.1, 2, 2.1, 3]) == (1, 2, 2, 1)
    assert peaks.group_sizes([]) == ()
    assert peaks.group_sizes([4.0]) == (1,)


# -- speed ------------------------------------------------------------------------

def test_estimate_speed_single_sensor():
    rec = clean_rec(LAAGRSS, 100.0)
    ps = detect(rec.strain, "SD", 0.8)
    assert peaks.estimate_speed(ps, LAAGRSS, rec.sample_rate) == pytest.approx(100.0, abs=1.0)
    slow = PeakSet(ps.indices * 2, ps.amplitudes, "SD", 0.8)
    assert peaks.estimate_speed(slow, LAAGRSS, rec.sample_rate) == pytest.approx(50.0, abs=0.5)
    with pytest.raises(peaks.InsufficientDataError):
        peaks.estimate_speed(PeakSet(ps.indices[:1], ps.amplitudes[:1], "SD", 0.8), LAAGRSS,
                             rec.sample_rate)


def test_estimate_speed_two_sensors():
    spec = PassageSpec(ALFA, 150.0, LoadScheme.HALF, (), snr_db=None)
    a = synthesize_passage(spec)
    b = synthesize_passage(spec, sensor_offset_m=3.0)
    pa, pb = detect(a.strain, "SD", 0.8), detect(b.strain, "SD", 0.8)
    v, d = peaks.estimate_speed_direction(pa, pb, 3.0, a.sample_rate)
    assert v == pytest.approx(150.0, rel=0.01) and d == 1
    v2, d2 = peaks.estimate_speed_direction(pb, pa, 3.0, a.sample_rate)
    assert v2 == v and d2 == -1


# -- sensitivity selection ---------------------------------------------------------

def test_select_sensitivity_cases():
    grid = [0.5, 0.6, 0.7]
    assert peaks.select_sensitivity(grid, [0.2, 0.9, 0.5], [0.7, 0.7, 0.7]) == 0.6
    assert peaks.select_sensitivity(grid, [0.2, 0.9, 0.5], [0.7, 0.7, 0.7], "equal") == 0.6
    # equal weighting prefers 0.5, AD-weighted prefers 0.7
    ac, ad = [1.0, 0.0, 0.0], [0.5, 0.5, 0.9]
    assert peaks.select_sensitivity(grid, ac, ad, "equal") == 0.5
    assert peaks.select_sensitivity(grid, ac, ad, "both") == 0.7
    assert peaks.select_sensitivity([0.3], [0.1], [0.2]) == 0.3
    with pytest.raises(ValueError):
        peaks.select_sensitivity([], [], [])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.floats(0.1, 10), st.floats(-3, 3))
def test_select_sensitivity_affine_invariant(scores, a, b):
    grid = np.linspace(0.1, 0.9, len(scores))
    sc = np.array(scores)
    base = peaks.select_sensitivity(grid, sc, sc)
    assert peaks.select_sensitivity(grid, a * sc + b, a * sc + b) == base
