"""
Peak detection on strain signals and axle semantics.

Four detectors are provided, each driven by a single ``sensitivity`` in
[0, 1] (higher sensitivity = lower threshold):

TB  power-ratio detector: ``x**2 / rms`` compared against a threshold.
PD  lookahead detector: extrema confirmed once the signal moves away by
    ``delta`` and no larger value follows within ``lookahead`` samples.
DP  first-difference detector with a minimum peak amplitude.
SD  prominence detector.

Plateaus report their leftmost sample.  Every reported index ``n`` satisfies
``x[n] > x[n-1]`` and the first sample after ``n`` that differs from
``x[n]`` is lower (plain ``x[n] > x[n+1]`` whenever there is no plateau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.signal import peak_prominences

ALGORITHMS = ("TB", "PD", "DP", "SD")
DEFAULT_LOOKAHEAD = 50
DEFAULT_GROUP_FRACTION = 0.4


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PeakSet:
    indices: np.ndarray
    amplitudes: np.ndarray
    algorithm: str
    sensitivity: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=float))
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("peak indices must be strictly increasing")

    def __len__(self):
        return int(self.indices.size)


@dataclass(frozen=True)
class SemanticFeatures:
    Z: int
    X: np.ndarray               # wheel times (s)
    Y: np.ndarray               # strain at each wheel (µm/m)
    context_load: float | None = None
    context_speed: float | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if not (X.size == Y.size == self.Z):
            raise ValueError("|X| and |Y| must equal Z")
        if X.size > 1 and np.any(np.diff(X) <= 0):
            raise ValueError("wheel times must be strictly increasing")


def _peakset(x, idx, algorithm, sensitivity):
    idx = np.asarray(idx, dtype=np.int64)
    return PeakSet(idx, x[idx] if idx.size else np.empty(0), algorithm, float(sensitivity))


def is_local_max(x, n: int) -> bool:
    """Local-maximum predicate, with plateaus attributed to their leftmost sample."""
    x = np.asarray(x)
    if n <= 0 or n >= x.size - 1 or not x[n] > x[n - 1]:
        return False
    j = n + 1
    while j < x.size and x[j] == x[n]:
        j += 1
    return j < x.size and x[j] < x[n]


def local_maxima(x) -> np.ndarray:
    """Indices of all interior local maxima (leftmost sample of a plateau)."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        return np.empty(0, dtype=np.int64)
    starts = np.r_[0, np.flatnonzero(np.diff(x) != 0) + 1]
    vals = x[starts]
    up = np.r_[False, vals[1:] > vals[:-1]]
    down = np.r_[vals[:-1] > vals[1:], False]
    return starts[up & down].astype(np.int64)


def prominence(x, peak_index: int) -> float:
    """Prominence of the peak at ``peak_index``.

    Walk left and right until terrain strictly higher than the peak (or the
    signal edge); the base on each side is the lowest sample passed.  The
    prominence is the peak height above the higher of the two bases.
    """
    x = np.asarray(x, dtype=float)
    if not is_local_max(x, peak_index):
        raise ValueError(f"index {peak_index} is not a local maximum")
    h = x[peak_index]
    left = h
    i = peak_index - 1
    while i >= 0 and x[i] <= h:
        left = min(left, x[i])
        i -= 1
    right = h
    i = peak_index + 1
    while i < x.size and x[i] <= h:
        right = min(right, x[i])
        i += 1
    return float(h - max(left, right))


def detect_tb(signal, sensitivity: float) -> PeakSet:
    """Power-ratio detector: samples whose ``x**2 / rms`` clears ``(1 - s) * max``."""
    x = np.asarray(signal, dtype=float)
    if x.size == 0:
        raise ValueError("empty signal")
    rms = np.sqrt(np.mean(x ** 2))
    if rms == 0:
        return _peakset(x, [], "TB", sensitivity)
    power = x ** 2 / rms
    cand = local_maxima(x)
    cand = cand[x[cand] > 0]
    thr = (1.0 - sensitivity) * power.max()
    return _peakset(x, cand[power[cand] >= thr], "TB", sensitivity)


@numba.njit(cache=True)
def _peakdetect(y, delta):
    # hysteresis walk: a maximum is confirmed once the signal falls more than
    # delta below it, a minimum once it rises more than delta above it
    n = y.size
    maxima = np.empty(n, dtype=np.int64)
    minima = np.empty(n, dtype=np.int64)
    n_max = 0
    n_min = 0
    mx = -np.inf
    mn = np.inf
    mxpos = 0
    mnpos = 0
    look_max = True
    for i in range(n):
        v = y[i]
        if v > mx:
            mx = v
            mxpos = i
        if v < mn:
            mn = v
            mnpos = i
        if look_max:
            if v < mx - delta:
                maxima[n_max] = mxpos
                n_max += 1
                mn = v
                mnpos = i
                look_max = False
        elif v > mn + delta:
            minima[n_min] = mnpos
            n_min += 1
            mx = v
            mxpos = i
            look_max = True
    return maxima[:n_max], minima[:n_min]


def detect_pd(signal, lookahead: int = DEFAULT_LOOKAHEAD, delta: float = 0.0):
    """Lookahead/delta detector.

    Maxima and minima alternate; each is confirmed when the signal moves
    more than ``delta`` away from it.  A maximum is then kept only if, within
    the next ``lookahead`` samples, the signal drops more than ``delta``
    below it without exceeding it.  Plateau maxima are moved to their
    leftmost sample and maxima that are not interior local maxima (signal
    edges, rising plateaus) are dropped.

    Returns ``(PeakSet of maxima, array of minima indices)``.
    """
    x = np.asarray(signal, dtype=float)
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    if lookahead >= x.size:
        raise ValueError("lookahead must be shorter than the signal")
    maxima, minima = _peakdetect(x, float(delta))
    keep = []
    for i in maxima:
        i = int(i)
        while i > 0 and x[i - 1] == x[i]:    # plateau -> leftmost sample
            i -= 1
        if not is_local_max(x, i) or (keep and keep[-1] == i):
            continue
        ahead = x[i + 1:i + 1 + lookahead]
        if ahead.max() <= x[i] and ahead.min() < x[i] - delta:
            keep.append(i)
    return _peakset(x, keep, "PD", delta), minima


def detect_dp(signal, min_amplitude: float) -> PeakSet:
    """First-difference detector: ``+`` to ``-`` sign changes at or above ``min_amplitude``."""
    x = np.asarray(signal, dtype=float)
    if x.size < 3:
        raise ValueError("signal needs at least 3 samples")
    dx = np.diff(x)
    nz = np.flatnonzero(dx)
    if nz.size < 2:
        return _peakset(x, [], "DP", min_amplitude)
    s = np.sign(dx[nz])
    turn = np.flatnonzero((s[:-1] > 0) & (s[1:] < 0))
    # the peak is the sample after the last rising step
    idx = nz[turn] + 1
    idx = idx[x[idx] >= min_amplitude]
    return _peakset(x, idx, "DP", min_amplitude)


def detect_sd(signal, min_prominence: float) -> PeakSet:
    """Prominence detector: local maxima whose prominence is at least ``min_prominence``."""
    x = np.asarray(signal, dtype=float)
    if x.size < 3:
        raise ValueError("signal needs at least 3 samples")
    cand = local_maxima(x)
    if cand.size == 0:
        return _peakset(x, [], "SD", min_prominence)
    prom = peak_prominences(x, cand)[0]
    return _peakset(x, cand[prom >= min_prominence], "SD", min_prominence)


def detect(signal, algorithm: str, sensitivity: float,
           lookahead: int = DEFAULT_LOOKAHEAD) -> PeakSet:
    """Run one of the four detectors with a unified sensitivity in [0, 1]."""
    algorithm = algorithm.upper()
    if not 0.0 <= sensitivity <= 1.0:
        raise ValueError("sensitivity must lie in [0, 1]")
    x = np.asarray(signal, dtype=float)
    frac = 1.0 - sensitivity
    span = float(x.max() - x.min()) if x.size else 0.0
    if algorithm == "TB":
        ps = detect_tb(x, sensitivity)
    elif algorithm == "PD":
        ps, _ = detect_pd(x, lookahead, frac * span)
    elif algorithm == "DP":
        ps = detect_dp(x, frac * float(x.max()))
    elif algorithm == "SD":
        ps = detect_sd(x, frac * span)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return PeakSet(ps.indices, ps.amplitudes, algorithm, float(sensitivity))


def extract_semantics(peaks: PeakSet, sample_rate: float,
                      context_load: float | None = None,
                      context_speed: float | None = None) -> SemanticFeatures:
    return SemanticFeatures(
        Z=len(peaks),
        X=peaks.indices / float(sample_rate),
        Y=peaks.amplitudes.copy(),
        context_load=context_load,
        context_speed=context_speed,
    )


def group_sizes(times, fraction: float = DEFAULT_GROUP_FRACTION) -> tuple[int, ...]:
    """Cluster consecutive wheels whose gap is below ``fraction`` of the largest gap."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        return ()
    if t.size == 1:
        return (1,)
    gaps = np.diff(t)
    split = gaps >= fraction * gaps.max()
    bounds = np.r_[0, np.flatnonzero(split) + 1, t.size]
    return tuple(int(b) for b in np.diff(bounds))


@dataclass(frozen=True)
class AxleCountResult:
    count_match: bool
    grouping_match: bool


def axle_count_accuracy(detected: SemanticFeatures, truth,
                        fraction: float = DEFAULT_GROUP_FRACTION) -> AxleCountResult:
    """Compare detected wheels against the axle layout of ``truth`` (a TrainType)."""
    return AxleCountResult(
        count_match=detected.Z == truth.expected_wheel_count,
        grouping_match=group_sizes(detected.X, fraction) == tuple(truth.expected_grouping),
    )


def match_to_truth(detected_times, truth_times):
    """Nearest detected wheel for each true wheel, within half the smallest true gap.

    Returns the signed time errors (NaN where no detection matched).
    """
    det = np.asarray(detected_times, dtype=float)
    tru = np.asarray(truth_times, dtype=float)
    err = np.full(tru.size, np.nan)
    if det.size == 0 or tru.size == 0:
        return err
    tol = 0.5 * np.min(np.diff(tru)) if tru.size > 1 else np.inf
    j = np.clip(np.searchsorted(det, tru), 1, max(det.size - 1, 1))
    cand = np.stack([det[j - 1], det[np.minimum(j, det.size - 1)]])
    best = cand[np.argmin(np.abs(cand - tru), axis=0), np.arange(tru.size)]
    ok = np.abs(best - tru) <= tol
    err[ok] = best[ok] - tru[ok]
    return err


def estimate_speed(peaks: PeakSet, train, sample_rate: float) -> float:
    """Train speed (km/h) from one sensor and a known axle layout.

    With a complete detection every consecutive pair gives ``spacing / dt``
    and the median is returned; otherwise the first and last peaks are taken
    as the first and last axles.
    """
    if len(peaks) < 2:
        raise InsufficientDataError("need at least two peaks")
    t = peaks.indices / float(sample_rate)
    pos = np.asarray(train.axle_positions, dtype=float)
    if len(peaks) == pos.size:
        v = np.median(np.diff(pos) / np.diff(t))
    else:
        v = (pos[-1] - pos[0]) / (t[-1] - t[0])
    return float(v * 3.6)


def estimate_speed_direction(peaks_a: PeakSet, peaks_b: PeakSet, sensor_gap: float,
                             sample_rate: float) -> tuple[float, int]:
    """Speed (km/h) and direction from two sensors ``sensor_gap`` metres apart.

    Direction is +1 when the train reaches sensor A first, -1 otherwise.
    """
    if len(peaks_a) < 1 or len(peaks_b) < 1 or len(peaks_a) + len(peaks_b) < 2:
        raise InsufficientDataError("need a first peak on both sensors")
    lag = (peaks_b.indices[0] - peaks_a.indices[0]) / float(sample_rate)
    if lag == 0:
        raise InsufficientDataError("zero lag between sensors")
    return float(sensor_gap / abs(lag) * 3.6), (1 if lag > 0 else -1)


def select_sensitivity(grid, ac_scores, ad_scores, weighting: str = "both") -> float:
    """Pick a sensitivity from axle-counting (AC) and anomaly-detection (AD) scores.

    ``weighting='equal'`` maximises ``0.5 AD + 0.5 AC``, ``'ad80'`` maximises
    ``0.8 AD + 0.2 AC``; ``'both'`` computes the two and keeps the AD-weighted
    choice when they disagree.
    """
    grid = np.asarray(grid, dtype=float)
    ac = np.asarray(ac_scores, dtype=float)
    ad = np.asarray(ad_scores, dtype=float)
    if grid.size == 0:
        raise ValueError("empty sensitivity grid")
    if not (grid.shape == ac.shape == ad.shape):
        raise ValueError("grid and score arrays must be aligned")
    equal = int(np.argmax(0.5 * ad + 0.5 * ac))
    ad80 = int(np.argmax(0.8 * ad + 0.2 * ac))
    if weighting == "equal":
        return float(grid[equal])
    if weighting in ("ad80", "both"):
        return float(grid[ad80])
    raise ValueError(f"unknown weighting {weighting!r}")
