"""A tour of the two-stage binary MDP.

The chain is tiny: X1 is a fair coin, X2 flips to +1 with probability
expit(b1*X1 + b2*A1), and only the second stage pays a reward.  That makes
the optimal Q functions available in closed form, which is what every test
in this package leans on.
"""
import numpy as np

from rwtq.envs import TwoStageParams, analytic_q, make_two_stage, sample_trajectories
from rwtq.harness import evaluate_policy
from rwtq.mdp import uniform_policy

# %% closed-form coefficients for the target and for a reward-shifted source
target = TwoStageParams()
source = target.with_kappa(2, 1.2)
for name, p in (("target", target), ("source", source)):
    th = analytic_q(p)
    print(f"{name:6s} theta1 =", np.round(th.theta1, 4))

# %% the observed state: intercept, current X, 29 nuisance normals, previous X and A
env = make_two_stage(target)
ds = sample_trajectories(env, uniform_policy(2), 5, np.random.default_rng(0))
print("state dim:", ds.state_dim)
print("stage-2 core coordinates of the first rows:\n", ds.states[:, 1][:, env.core_cols])

# %% the optimal policy's value, exactly and by simulation
print("exact optimal value:", round(env.optimal_mean_value(), 4))
rewards = evaluate_policy(env, env.q_star(), 20_000, 1.0, np.random.default_rng(1))
print(f"simulated:           {rewards.mean():.4f} +/- {rewards.std(ddof=1) / np.sqrt(len(rewards)):.4f}")

# %% and the same numbers from dynamic programming on the finite core chain
fin = make_two_stage(TwoStageParams(noise_dims=0)).finite()
q = fin.optimal_q_table()
print("Q1* at X1 = -1, +1 (actions -1, +1):\n", np.round(q[0, :2], 4))
