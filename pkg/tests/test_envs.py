import configparser

import numpy as np
import pytest

from rwtq.envs import (TwoStageParams, analytic_q, constant_reward_chain, expit, expit_testbed, load_env_config,
                       make_two_stage, params_from_config, sample_trajectories, strip_noise, to_index, to_sign)
from rwtq.mdp import uniform_policy


def test_expit_values():
    assert expit(0.0) == 0.5
    assert abs(expit(2.0) - 0.8808) < 1e-4
    x = np.linspace(-700, 700, 41)
    assert np.allclose(expit(x) + expit(-x), 1.0)
    assert np.all(np.isfinite(expit(np.array([-700.0, 700.0]))))


def test_sign_index_maps():
    assert np.array_equal(to_sign([0, 1]), [-1.0, 1.0])
    assert np.array_equal(to_index([-1.0, 1.0]), [0, 1])


@pytest.mark.parametrize("kappa, want", [
    ((1,) * 7, (2.69, 1.19, 1.69, 1.19)),
    ((1, 1.2, 1, 1, 1, 1, 1), (2.69, 1.39, 1.69, 1.19)),
    ((1, 2, 3, 4, 0, 0, 0), (1, 2, 3, 4)),
])
def test_analytic_coefficients(kappa, want):
    th = analytic_q(TwoStageParams(kappa=kappa))
    assert np.allclose(th.theta1, want, atol=0.005)
    assert tuple(th.theta2) == tuple(float(k) for k in kappa)


def test_finite_dp_matches_analytic():
    env = make_two_stage(TwoStageParams(noise_dims=0, kappa=(1, 1.2, 0.5, 1, 0.7, 1, 1.1), b1=0.6))
    fin = env.finite()
    q = fin.optimal_q_table()
    qs = env.q_star()
    for t in (1, 2):
        states = fin.features
        occ = fin.state_action_marginals()[t - 1].sum(1) > 0
        assert np.allclose(q[t - 1][occ], qs.values(t, states[occ]), atol=1e-12)


def test_optimal_mean_value():
    assert abs(make_two_stage().optimal_mean_value() - 4.3808) < 1e-3


def test_first_reward_zero_and_layout():
    env = make_two_stage()
    ds = sample_trajectories(env, uniform_policy(2), 1000, np.random.default_rng(0))
    assert np.all(ds.rewards[:, 0] == 0)
    assert ds.state_dim == 33
    assert np.all(ds.states[:, 0, 0] == 1.0) and np.all(ds.states[:, 0, -2:] == 0)
    assert np.array_equal(ds.states[:, 1, -2], ds.states[:, 0, 1])
    assert np.array_equal(ds.states[:, 1, -1], to_sign(ds.actions[:, 0]))


def _stage2_states(env, n, x1, a1, x2, rng):
    s = env.reset(rng, n)
    s[:, 1], s[:, -2], s[:, -1] = x2, x1, a1
    return s


def test_reward_law_mean():
    env = make_two_stage()
    rng = np.random.default_rng(1)
    s = _stage2_states(env, 100_000, 1.0, 1.0, 1.0, rng)
    r, _ = env.step(2, s, np.ones(100_000, dtype=int), rng)
    assert abs(r.mean() - 7.0) < 0.02


def test_transition_law():
    env = make_two_stage()
    rng = np.random.default_rng(2)
    s = env.reset(rng, 100_000)
    s[:, 1] = 1.0
    _, nxt = env.step(1, s, np.ones(100_000, dtype=int), rng)
    assert abs((nxt[:, 1] > 0).mean() - expit(2.0)) < 0.01


def test_noise_coordinates_are_irrelevant():
    env = make_two_stage()
    rng = np.random.default_rng(3)
    s = _stage2_states(env, 500, 1.0, -1.0, 1.0, rng)
    perm = s.copy()
    perm[:, 2:-2] = perm[:, 2:-2][:, ::-1]
    a = rng.integers(0, 2, 500)
    r1, n1 = env.step(2, s, a, np.random.default_rng(9))
    r2, n2 = env.step(2, perm, a, np.random.default_rng(9))
    assert np.array_equal(r1, r2)
    assert np.array_equal(n1[:, env.core_cols], n2[:, env.core_cols])


def test_sampling_contract():
    env = make_two_stage()
    with pytest.raises(ValueError):
        sample_trajectories(env, uniform_policy(2), 0, np.random.default_rng(0))
    a = sample_trajectories(env, uniform_policy(2), 50, np.random.default_rng(5))
    b = sample_trajectories(env, uniform_policy(2), 50, np.random.default_rng(5))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)
    big = sample_trajectories(make_two_stage(TwoStageParams(noise_dims=0)), uniform_policy(2), 100_000,
                              np.random.default_rng(6))
    assert np.all(np.abs(big.actions.mean(0) - 0.5) < 0.01)


def test_strip_noise_keeps_core():
    env = make_two_stage()
    ds = sample_trajectories(env, uniform_policy(2), 10, np.random.default_rng(0))
    core = strip_noise(ds, env)
    assert core.state_dim == 4
    assert np.array_equal(core.states[:, :, 1], ds.states[:, :, 1])


def test_constant_chain_and_testbed():
    chain = constant_reward_chain(horizon=3, reward=1.0)
    ds = sample_trajectories(chain, uniform_policy(2), 20, np.random.default_rng(0))
    assert np.all(ds.rewards == 1.0)
    tb = expit_testbed(1.0, 1.0)
    assert np.isclose(tb.P[0, 1, 1, 1], expit(2.0))


def test_env_config(tmp_path):
    path = tmp_path / "env.ini"
    path.write_text("[env]\nb1 = 0.5\nkappa = 1,1.2,1,1,1,1,1\nnoise_dims = 3\nseed = 11\n")
    params, seed = load_env_config(path)
    assert params.b1 == 0.5 and params.kappa[1] == 1.2 and params.noise_dims == 3 and seed == 11
    cp = configparser.ConfigParser()
    cp.read_string("[env]\nkappa2 = 1.2\n")
    assert params_from_config(cp["env"])[0].kappa == (1, 1.2, 1, 1, 1, 1, 1)
