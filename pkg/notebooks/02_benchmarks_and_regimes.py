# %% [markdown]
# # Benchmarks, search oracles and regime tags
#
# Compares the future-knowledge greedy strategy with exhaustive search,
# shows the momentum envelope over fixed quantities, and tags regimes on a
# day stitched together from different trends.

# %%
from __future__ import annotations

import numpy as np

from lobworld.benchmarks import StrategyEnvelope, bfs_optimal, greedy_optimal
from lobworld.data import state_chain
from lobworld.evaluation import (GreedyStrategy, MomentumStrategy, regime_labels,
                                 replay_policy, tag_regimes, variance_report)
from lobworld.synthetic import generate_dataset, generate_mixed_day, zero_noise

# %% [markdown]
# ## Greedy against exhaustive search
#
# Greedy keeps only the best one-step child, so it can never beat the full
# search. On a monotone price path with a trend-following action available
# the two coincide.

# %%
rng = np.random.default_rng(0)
gaps = []
for _ in range(200):
    mm = 100 + np.concatenate([[0], np.cumsum(rng.normal(0, 0.05, 5))])
    qs = [-1000, -100, 0, 100, 1000]
    gaps.append(bfs_optimal(mm, qs) - greedy_optimal(mm, qs).pnl)
print(f"BFS - greedy over 200 random paths: min {min(gaps):.2e}, max {max(gaps):.3f}")

rising = 100 + np.cumsum([0, 0.02, 0.01, 0.05, 0.03])
print("rising path:", greedy_optimal(rising, qs).pnl, bfs_optimal(rising, qs))

# %% [markdown]
# ## Momentum envelope on a noiseless ascending day

# %%
days = generate_dataset(3, ["ascending", "descending"], 6000, zero_noise(),
                        splits=["test"] * 2).days
qs = list(range(100, 1001, 100))
for day in days:
    curves = [replay_policy(MomentumStrategy(q), [day]).days[0].cum_pnl for q in qs]
    env = StrategyEnvelope(qs, np.array(curves))
    greedy = greedy_optimal(state_chain(day, max_states=300)).pnl
    print(f"{day.name}: momentum final PnL range [{env.lower[-1]:.1f}, {env.upper[-1]:.1f}],"
          f" greedy {greedy:.1f}")

# %% [markdown]
# ## Regime tagging and per-regime variance
#
# Each day goes to the regime covering most of its ticks; the stitched day
# is mostly descending. The variance is the sample variance of day totals, so
# a regime holding a single day shows ``nan``.

# %%
mixed = generate_mixed_day(4, [("ascending", 3000), ("oscillating", 3000),
                               ("descending", 3000)], name="mixed", split="test")
labels = regime_labels(mixed.lob.mids())
print(f"tick-level agreement with generator labels: "
      f"{np.mean(labels == np.array(mixed.regimes)):.2f}")
for tag in tag_regimes(mixed.lob.mids()):
    print(f"  {tag.label:12s} ticks {tag.start:5d}-{tag.stop:5d}")

reports = {p.name: replay_policy(p, [*days, mixed]) for p in (GreedyStrategy(),
                                                            MomentumStrategy(1000))}
for name, row in variance_report(reports).items():
    print(name, {k: round(v, 1) for k, v in row.items()})
