"""Estimating transition-density ratios on a one-step expit chain.

Two ways to get w = p_target / p_source: fit both densities and divide
(with a floor on the denominator), or reuse a well-estimated source density
and learn w directly from the scarce target tuples.  With 500 target and
20,000 source tuples the second route is usually closer to the truth.
"""
import numpy as np

from rwtq.bench import DOMAIN, BenchConfig, bench_cell
from rwtq.density import estimate_conditional_density, normalize_density
from rwtq.envs import expit, expit_testbed, sample_trajectories
from rwtq.mdp import uniform_policy

# %% a tabular density fit recovers expit(2)
sl = sample_trajectories(expit_testbed(), uniform_policy(2), 50_000, np.random.default_rng(0)).stage(1)
model = estimate_conditional_density(sl.states, sl.actions, sl.next_states, DOMAIN, kind="tabular")
print(f"rho(X'=1 | X=1, A=1) = {model([[1.0]], [1], [[1.0]])[0]:.4f}   (truth {expit(2.0):.4f})")
norm = normalize_density(model)
print("normalized slice:", norm([[1.0], [1.0]], [1, 1], [[-1.0], [1.0]]))

# %% plain vs transfer ratio estimates over a few seeds
cfg = BenchConfig(target_sizes=(500,), source_size=20_000, seeds=tuple(range(10)))
rows = [bench_cell(cfg, 500, s) for s in cfg.seeds]
plain = np.array([r["no_transfer"] for r in rows])
learned = np.array([r["transfer"] for r in rows])
print(f"mean RMSE  plain {plain.mean():.4f}   transfer {learned.mean():.4f}")
print(f"transfer at least as good in {np.sum(learned <= plain)}/{len(rows)} seeds")
