"""Explore, fit, commit: transfer against single-task Q-learning.

A source MDP that differs from the target only in one reward coefficient
supplies 10,000 trajectories.  Both learners see the same few target
trajectories and are then evaluated greedily on identical random draws.
This runs a single seed with a small network so it finishes in about a
minute; the acceptance suite runs the full 20-seed grid.
"""
import numpy as np

from rwtq.approx import TrainConfig
from rwtq.harness import ExperimentConfig, run_etc_experiment

cfg = ExperimentConfig(target_sizes=(100, 500), source_size=10_000, seeds=(0,), eval_episodes=100, width=64,
                       train=TrainConfig(max_epochs=300, batch_size=128, step_size=1e-3, momentum=0.9,
                                         max_steps=300))
result = run_etc_experiment(cfg, write=False)
print(f"optimal value per episode: {result.optimal_value:.4f}")
for n0 in cfg.target_sizes:
    for method in ("transfer", "single"):
        key = (0, n0, method)
        print(f"n0={n0:4d} {method:8s} mean reward {result.rewards[key].mean():6.3f}  "
              f"final regret {result.cumulative_regret(key)[-1]:8.2f}  fit {result.seconds[key]:.1f}s")
