"""
Ranking strategies with Friedman and Shaffer
============================================

Strategies are treatments and (seed, detector) pairs are blocks. The
Friedman test asks whether any strategy ranks differently; the Shaffer
procedure then adjusts the pairwise mean-rank comparisons.
"""

import numpy as np

from wayside import stats

fixed = np.array([[1, 2, 3]] * 3, float)
print("fixed ranking: statistic %.1f, p %.4f" % stats.friedman(fixed))
print("exact permutation p: %.4f" % stats.friedman_exact_p(fixed))

rng = np.random.default_rng(0)
scores = rng.normal(size=(12, 4)) + np.array([0.0, 0.2, 0.8, 1.0])
table = stats.RankBlockTable(scores, ("I-WD", "I-WD*", "S-WD", "S-WD*"))
stat, p = stats.friedman(table)
print("statistic %.2f, p %.4g" % (stat, p))
res = stats.shaffer_posthoc(table, require_rejection=False)
for (a, b), raw, adj in zip(res.pairs, res.raw_p, res.adjusted_p):
    print("%-6s vs %-6s raw %.4f adjusted %.4f" % (res.names[a], res.names[b], raw, adj))

mean, half = stats.confidence_interval([0.92, 0.93, 0.94, 0.93, 0.92])
print("accuracy", stats.format_ci(mean, half))
