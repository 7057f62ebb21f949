"""
Friedman omnibus test, Shaffer static post-hoc comparisons and normal
confidence intervals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import rankdata


class DegenerateDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Regularized incomplete gamma
# ---------------------------------------------------------------------------

_EPS = 1e-16
_MAX_ITER = 1000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x).

    Series for ``x < a + 1``, continued fraction otherwise.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_sf(x: float, df: int) -> float:
    if x <= 0:
        return 1.0
    return gammaincc(df / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# Friedman
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankBlockTable:
    """Scores of ``k`` treatments (columns) over ``n`` blocks (rows).

    Higher scores get higher ranks; ties get average ranks.
    """

    scores: np.ndarray
    treatments: tuple[str, ...] | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2:
            raise ValueError("scores must be a blocks x treatments matrix")
        object.__setattr__(self, "scores", s)
        if self.treatments is not None and len(self.treatments) != s.shape[1]:
            raise ValueError("one treatment name per column")

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def k(self) -> int:
        return self.scores.shape[1]

    @property
    def ranks(self) -> np.ndarray:
        return rankdata(self.scores, axis=1)

    @property
    def names(self) -> tuple[str, ...]:
        return self.treatments or tuple(f"T{j + 1}" for j in range(self.k))


def _table(table) -> RankBlockTable:
    return table if isinstance(table, RankBlockTable) else RankBlockTable(table)


def friedman_statistic(ranks: np.ndarray) -> float:
    """Tie-corrected Friedman chi-square from a block-rank matrix."""
    n, k = ranks.shape
    Rj = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * float(np.sum(Rj ** 2)) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    denom = 1.0 - ties / (n * k * (k * k - 1))
    if denom <= 0:
        raise DegenerateDataError("every block is fully tied")
    return max(stat / denom, 0.0)


def friedman(table) -> tuple[float, float]:
    """Friedman test; returns ``(statistic, p_value)`` with a chi-square(k-1) tail."""
    t = _table(table)
    if t.n < 2 or t.k < 3:
        raise ValueError("Friedman test needs at least 2 blocks and 3 treatments")
    stat = friedman_statistic(t.ranks)
    return stat, chi2_sf(stat, t.k - 1)


def friedman_exact_p(table) -> float:
    """Exact p-value by enumerating every within-block permutation of the ranks."""
    t = _table(table)
    ranks = t.ranks
    observed = friedman_statistic(ranks)
    perms = [np.array(sorted(set(itertools.permutations(row)))) for row in ranks]
    hits = total = 0
    for combo in itertools.product(*perms):
        s = friedman_statistic(np.array(combo))
        total += 1
        hits += s >= observed - 1e-9
    return hits / total


# ---------------------------------------------------------------------------
# Shaffer
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _possible_true(k: int) -> frozenset:
    # numbers of hypotheses that can be simultaneously true among k treatments
    if k <= 1:
        return frozenset({0})
    out = set()
    for j in range(1, k + 1):
        for x in _possible_true(k - j):
            out.add(math.comb(j, 2) + x)
    return frozenset(out)


def shaffer_multipliers(k: int) -> list[int]:
    """Shaffer's static factors ``t_i`` for the ``m = k(k-1)/2`` ordered comparisons."""
    m = k * (k - 1) // 2
    S = sorted(_possible_true(k))
    return [max(s for s in S if s <= m - i + 1) for i in range(1, m + 1)]


@dataclass(frozen=True)
class PosthocResult:
    pairs: tuple[tuple[int, int], ...]
    z: np.ndarray
    raw_p: np.ndarray
    adjusted_p: np.ndarray
    names: tuple[str, ...]

    def matrix(self) -> np.ndarray:
        """Symmetric k x k matrix of adjusted p-values (1 on the diagonal)."""
        k = len(self.names)
        M = np.ones((k, k))
        for (a, b), p in zip(self.pairs, self.adjusted_p):
            M[a, b] = M[b, a] = p
        return M


def shaffer_posthoc(table, alpha: float = 0.05, require_rejection: bool = True) -> PosthocResult:
    """Pairwise mean-rank z-tests adjusted with Shaffer's static procedure.

    Raises ``ValueError`` when the Friedman test does not reject at ``alpha``
    unless ``require_rejection`` is False.
    """
    t = _table(table)
    if t.k < 3:
        raise ValueError("post-hoc comparisons need k >= 3")
    if require_rejection:
        _, p = friedman(t)
        if p >= alpha:
            raise ValueError(f"Friedman test did not reject at alpha={alpha} (p={p:.4g})")
    n, k = t.n, t.k
    mean_ranks = t.ranks.mean(axis=0)
    se = math.sqrt(k * (k + 1) / (6.0 * n))
    pairs = tuple(itertools.combinations(range(k), 2))
    z = np.array([(mean_ranks[a] - mean_ranks[b]) / se for a, b in pairs])
    raw = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    order = np.argsort(raw, kind="stable")
    mult = shaffer_multipliers(k)
    adj = np.empty_like(raw)
    running = 0.0
    for pos, idx in enumerate(order):
        running = max(running, min(1.0, mult[pos] * raw[idx]))
        adj[idx] = running
    return PosthocResult(pairs, z, raw, adj, t.names)


# ---------------------------------------------------------------------------
# Confidence intervals
# ---------------------------------------------------------------------------

def confidence_interval(samples) -> tuple[float, float]:
    """``(mean, 1.96 * s / sqrt(n))`` with the sample standard deviation."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    return float(x.mean()), float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def format_ci(mean: float, half_width: float, digits: int = 2) -> str:
    """Table style ``.93 ± .01``."""
    def short(v):
        s = f"{v:.{digits}f}"
        return s[1:] if s.startswith("0.") else s.replace("-0.", "-.")
    return f"{short(mean)} ± {short(half_width)}"


def parse_ci(text: str) -> tuple[float, float]:
    mean, half = text.split("±")
    return float(mean.strip()), float(half.strip())
