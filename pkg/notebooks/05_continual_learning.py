"""
Replay across operating domains
===============================

Five domains differ in speed range and load. A classifier is updated
domain by domain; the replay buffer decides which earlier rows are mixed
back in. The performance matrix R gives forward and backward transfer,
intransigence and the knowledge-gain ratio.
"""

import numpy as np

from wayside import replay
from wayside.experiments import cl_domains, desk_config

cfg = desk_config(embed={"epochs": 20},
                  replay={"passages_per_domain": 40, "vae_pool": 60, "seeds": [0]})
domains = cl_domains(cfg, seed=0)
print("domains:", [len(d) for d in domains])

for strat in ("baseline", "rs", "lb"):
    res = replay.run_domain_stream(domains, strat, capacity=20, seed=0)
    m = res.metrics
    print("%-8s FWT %+.3f  BWT %+.3f  IM %+.3f  KGR %.3f"
          % (strat, m["fwt"], m["bwt"], m["im"], m["kgr"]))

print("R for rs:")
print(np.round(replay.run_domain_stream(domains, "rs", 20, seed=0).matrix.R, 2))

# reservoir sampling keeps each item with probability k / n
rng = np.random.default_rng(0)
hits = np.zeros(1000)
for _ in range(300):
    buf = replay.reservoir_extend(replay.MemoryBuffer(50), range(1000), 0, rng)
    hits[np.array(buf.entries)] += 1
print("inclusion rate %.4f (k/n = 0.05)" % (hits.mean() / 300))
