import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwtq.approx import DataError, TabularApprox
from rwtq.density import (BoxDomain, DegenerateDensityError, DensityModel, FiniteDomain, UnsupportedDomainError,
                          _features, estimate_conditional_density, exact_ratio_finite, finite_cells,
                          normalize_density, ratio_no_transfer, ratio_rmse, ratio_with_transfer)
from rwtq.envs import expit, expit_testbed, sample_trajectories
from rwtq.mdp import default_action_codes, uniform_policy

DOM = FiniteDomain([[-1.0], [1.0]])
CODES = default_action_codes(2)


def tuples(b1, n, seed, b2=1.0):
    return sample_trajectories(expit_testbed(b1, b2), uniform_policy(2), n, np.random.default_rng(seed)).stage(1)


def exact_model(b1, b2=1.0):
    """Tabular density holding the true transition probabilities."""
    s, a, sp, (si, ai, pi) = finite_cells(DOM, 2)
    table = expit_testbed(b1, b2).P[0]
    return DensityModel(TabularApprox(_features(s, a, sp, CODES), table[si, ai, pi]), DOM, CODES)


def table_model(values):
    """Raw tabular model on one (s, a) slice of the 2-point space."""
    s, a, sp, (si, ai, pi) = finite_cells(DOM, 2)
    vals = np.array([values[p] for p in pi], dtype=float)
    return DensityModel(TabularApprox(_features(s, a, sp, CODES), vals), DOM, CODES)


def test_tabular_density_recovers_expit():
    sl = tuples(1.0, 50_000, 0)
    m = estimate_conditional_density(sl.states, sl.actions, sl.next_states, DOM, kind="tabular")
    assert abs(m([[1.0]], [1], [[1.0]])[0] - expit(2.0)) < 0.02


def test_uniform_next_state_gives_unit_density():
    rng = np.random.default_rng(0)
    n = 10_000
    states, actions, nxt = rng.uniform(size=(n, 1)), rng.integers(0, 2, n), rng.uniform(size=(n, 1))
    m = estimate_conditional_density(states, actions, nxt, BoxDomain([0.0], [1.0]), kind="constant", seed=1)
    assert abs(m([[0.5]], [0], [[0.5]])[0] - 1.0) < 0.1


def test_single_repeated_tuple():
    m = estimate_conditional_density(np.ones((5, 1)), np.ones(5, int), np.ones((5, 1)), DOM, kind="tabular")
    assert m([[1.0]], [1], [[1.0]])[0] == pytest.approx(1.0)
    assert m([[1.0]], [1], [[-1.0]])[0] == pytest.approx(0.0)


def test_unbounded_or_unknown_domain_rejected():
    with pytest.raises(ValueError):
        BoxDomain([0.0], [np.inf])
    with pytest.raises(UnsupportedDomainError):
        estimate_conditional_density(np.ones((2, 1)), [0, 1], np.ones((2, 1)), domain="R", kind="tabular")
    with pytest.raises(ValueError):
        estimate_conditional_density(np.ones((0, 1)), [], np.ones((0, 1)), DOM, kind="tabular")


def test_normalization_examples():
    probe_s, probe_a = np.array([[1.0], [1.0]]), np.array([1, 1])
    nxt = np.array([[-1.0], [1.0]])
    assert np.allclose(normalize_density(table_model([0.3, 0.9]))(probe_s, probe_a, nxt), [0.25, 0.75])
    assert np.allclose(normalize_density(table_model([-0.2, 0.6]))(probe_s, probe_a, nxt), [0.0, 1.0])
    exact = exact_model(1.0)
    assert np.allclose(normalize_density(exact)(probe_s, probe_a, nxt), exact(probe_s, probe_a, nxt), atol=1e-12)
    with pytest.raises(DegenerateDensityError):
        normalize_density(table_model([-0.2, 0.0]), probe_s, probe_a)
    with pytest.raises(ValueError):
        normalize_density(normalize_density(exact))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 5), min_size=2, max_size=2).filter(lambda v: max(v) > 1e-3))
def test_normalized_finite_slices_sum_to_one(vals):
    m = normalize_density(table_model(vals))
    total = m([[1.0], [1.0]], [0, 0], [[-1.0], [1.0]]).sum()
    assert abs(total - 1.0) <= 1e-12


def test_box_normalization_by_monte_carlo():
    rng = np.random.default_rng(0)
    n = 4000
    m = estimate_conditional_density(rng.uniform(size=(n, 1)), rng.integers(0, 2, n), rng.uniform(0, 2, size=(n, 1)),
                                     BoxDomain([0.0], [2.0]), kind="linear", seed=3)
    nm = normalize_density(m, [[0.5]], [0])
    grid = np.linspace(0, 2, 2001)[:, None]
    mass = np.trapezoid(nm(np.full_like(grid, 0.5), np.zeros(len(grid), int), grid), grid[:, 0])
    assert abs(mass - 1.0) < 0.02


def test_ratio_no_transfer_examples():
    same = exact_model(1.0)
    r = ratio_no_transfer(same, same, 0.05)
    s, a, sp, _ = finite_cells(DOM, 2)
    assert np.allclose(r(s, a, sp), 1.0)
    w = ratio_no_transfer(exact_model(1.0), exact_model(0.5), 0.05)
    assert w([[1.0]], [1], [[1.0]])[0] == pytest.approx(expit(2.0) / expit(1.5), abs=1e-12)
    zero = ratio_no_transfer(table_model([0.0, 1.0]), same, 0.05)
    assert zero([[1.0]], [1], [[-1.0]])[0] == 0.0
    with pytest.raises(ValueError):
        ratio_no_transfer(same, DensityModel(same.approx, FiniteDomain([[0.0], [1.0]]), CODES))


def test_floor_is_effective():
    tiny = table_model([1e-6, 1.0])
    r = ratio_no_transfer(table_model([1.0, 1.0]), tiny, 0.05)
    r.probe = []
    s, a, sp, _ = finite_cells(DOM, 2)
    out = r(s, a, sp)
    assert min(r.probe) >= 0.05 and np.all(out >= 0) and np.all(np.isfinite(out))


def test_transfer_ratio_identity_cases():
    sl = tuples(1.0, 20_000, 1)
    src = exact_model(1.0)
    for kind in ("tabular", "constant"):
        g = ratio_with_transfer(src, sl.states, sl.actions, sl.next_states, kind=kind)
        s, a, sp, _ = finite_cells(DOM, 2)
        assert np.max(np.abs(g(s, a, sp) - 1.0)) < 0.05
    with pytest.raises(ValueError):
        ratio_with_transfer(src, np.ones((0, 1)), [], np.ones((0, 1)), kind="tabular")


def test_transfer_ratio_recovers_quotient():
    sl = tuples(1.0, 50_000, 2)
    g = ratio_with_transfer(exact_model(0.9), sl.states, sl.actions, sl.next_states, kind="tabular")
    exact = exact_ratio_finite(expit_testbed(1.0).P[0], expit_testbed(0.9).P[0], 0.05).table
    s, a, sp, (si, ai, pi) = finite_cells(DOM, 2)
    assert np.max(np.abs(g(s, a, sp) - exact[si, ai, pi])) < 0.05


def test_exact_ratio_examples():
    t = np.array([[[0.8808, 0.1192]]])
    s = np.array([[[0.8176, 0.1824]]])
    r = exact_ratio_finite(t, s, 0.01).table
    assert np.allclose(r[0, 0], [1.0773, 0.6535], atol=1e-4)
    assert np.allclose(exact_ratio_finite(t, t, 0.01).table, 1.0)
    with pytest.raises(DataError):
        exact_ratio_finite(t, 2 * s, 0.01)


def test_no_transfer_rmse_shrinks_with_data():
    exact = exact_ratio_finite(expit_testbed(1.0).P[0], expit_testbed(0.9).P[0], 0.05).table
    means = []
    for n in (1000, 5000, 25_000):
        errs = []
        for seed in range(10):
            t, s = tuples(1.0, n, seed), tuples(0.9, n, 100 + seed)
            mt = estimate_conditional_density(t.states, t.actions, t.next_states, DOM, kind="tabular")
            ms = estimate_conditional_density(s.states, s.actions, s.next_states, DOM, kind="tabular")
            errs.append(ratio_rmse(ratio_no_transfer(mt, ms, 0.05), exact, DOM))
        means.append(np.mean(errs))
    assert means[0] >= means[1] >= means[2]


def test_relu_net_density_runs_and_is_deterministic():
    sl = tuples(1.0, 300, 3)
    from rwtq.approx import NetConfig, TrainConfig
    kw = dict(kind="relu-net", net_config=NetConfig(input_dim=1, width=8), train_config=TrainConfig(max_epochs=5),
              seed=4)
    a = estimate_conditional_density(sl.states, sl.actions, sl.next_states, DOM, **kw)
    b = estimate_conditional_density(sl.states, sl.actions, sl.next_states, DOM, **kw)
    s, ac, sp, _ = finite_cells(DOM, 2)
    assert np.array_equal(a(s, ac, sp), b(s, ac, sp))
