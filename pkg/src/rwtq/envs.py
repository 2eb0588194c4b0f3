"""Environments: the two-stage binary MDP with closed-form Q*, and finite tabular MDPs.

Every environment works on batches: ``reset(rng, n)`` returns an (n, d)
array of states and ``step(stage, states, actions, rng)`` returns rewards and
next states.  Each call consumes the same random draws whatever the actions
are, so two policies evaluated on the same seed see common random numbers.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .mdp import Dataset, MdpSpec, StructureError, TableQ, StagewiseQ


def expit(x):
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def to_sign(actions) -> np.ndarray:
    """Action index -> +/-1 encoding (0 -> -1, 1 -> +1)."""
    return 2.0 * np.asarray(actions, dtype=float) - 1.0


def to_index(signs) -> np.ndarray:
    return (np.asarray(signs) > 0).astype(int)


class Environment:
    spec: MdpSpec

    def reset(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        raise NotImplementedError

    def step(self, stage: int, states, actions, rng: np.random.Generator):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# two-stage binary MDP


@dataclass(frozen=True)
class TwoStageParams:
    b1: float = 1.0
    b2: float = 1.0
    kappa: tuple = (1.0,) * 7
    noise_dims: int = 29
    reward_noise_sd: float = 1.0

    def __post_init__(self):
        if len(self.kappa) != 7:
            raise ValueError("kappa needs 7 coefficients")
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be non-negative")
        if not self.reward_noise_sd > 0:
            raise ValueError("reward_noise_sd must be positive")
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))

    @property
    def observed_dim(self) -> int:
        """Intercept, current binary state, noise coordinates."""
        return 2 + self.noise_dims

    @property
    def state_dim(self) -> int:
        """Observed covariates plus the (previous state, previous action) history slots."""
        return self.observed_dim + 2

    def with_kappa(self, index: int, value: float) -> "TwoStageParams":
        """Copy with kappa_{index} (1-based) replaced."""
        k = list(self.kappa)
        k[index - 1] = value
        return TwoStageParams(self.b1, self.b2, tuple(k), self.noise_dims, self.reward_noise_sd)


@dataclass(frozen=True)
class ThetaCoefficients:
    theta2: tuple
    theta1: tuple


def analytic_q(params: TwoStageParams) -> ThetaCoefficients:
    """Closed-form coefficients of Q*_2 (equal to kappa) and Q*_1."""
    b1, b2 = params.b1, params.b2
    k1, k2, k3, k4, k5, k6, k7 = params.kappa
    e_pp, e_mp, e_pm, e_mm = (expit(b1 + b2), expit(-b1 + b2), expit(b1 - b2), expit(-b1 - b2))
    q1 = 0.25 * (e_pp + e_mp)
    q2 = 0.25 * (e_pm + e_mm)
    q1p = 0.25 * (e_pp - e_mp)
    q2p = 0.25 * (e_pm - e_mm)
    f1, f2, f3, f4 = (abs(k5 + k6 + k7), abs(k5 + k6 - k7), abs(k5 - k6 + k7), abs(k5 - k6 - k7))
    theta1 = (
        k1 + q1 * f1 + q2 * f2 + (0.5 - q1) * f3 + (0.5 - q2) * f4,
        k2 + q1p * f1 + q2p * f2 - q1p * f3 - q2p * f4,
        k3 + q1 * f1 - q2 * f2 + (0.5 - q1) * f3 - (0.5 - q2) * f4,
        k4 + q1p * f1 - q2p * f2 - q1p * f3 + q2p * f4,
    )
    return ThetaCoefficients(theta2=params.kappa, theta1=tuple(float(v) for v in theta1))


def q1_star(theta: ThetaCoefficients, x1, a1):
    """Q*_1 at binary state x1 and action a1 (both in +/-1)."""
    t = theta.theta1
    return t[0] + t[1] * x1 + t[2] * a1 + t[3] * x1 * a1


def q2_star(theta: ThetaCoefficients, x1, a1, x2, a2):
    t = theta.theta2
    return t[0] + t[1] * x1 + t[2] * a1 + t[3] * x1 * a1 + t[4] * a2 + t[5] * x2 * a2 + t[6] * a1 * a2


class TwoStageEnv(Environment):
    """Binary two-stage MDP observed through ``[1, X_t, noise..., X_prev, A_prev]``.

    At stage 1 the history slots are zero; at stage 2 they hold (X_1, A_1).
    The stage-2 transition leads to a terminal state with X = 0.
    """

    def __init__(self, params: TwoStageParams, gamma: float = 1.0):
        self.params = params
        self.spec = MdpSpec(params.state_dim, 2, 2, gamma)
        self.theta = analytic_q(params)

    # column layout
    @property
    def x_col(self) -> int:
        return 1

    @property
    def hist_cols(self) -> tuple:
        d = self.params.state_dim
        return (d - 2, d - 1)

    @property
    def core_cols(self) -> list:
        """Columns carrying the binary chain (intercept, X_t, X_prev, A_prev)."""
        return [0, 1, *self.hist_cols]

    def _observe(self, x, hist_x, hist_a, rng):
        n = len(x)
        noise = rng.standard_normal((n, self.params.noise_dims))
        return np.column_stack([np.ones(n), x, noise, hist_x, hist_a])

    def reset(self, rng, n=1):
        x1 = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return self._observe(x1, np.zeros(n), np.zeros(n), rng)

    def step(self, stage, states, actions, rng):
        states = np.atleast_2d(states)
        n = len(states)
        a = to_sign(actions)
        u = rng.random(n)
        eps = rng.standard_normal(n)
        x = states[:, 1]
        b1, b2 = self.params.b1, self.params.b2
        if stage == 1:
            x2 = np.where(u < expit(b1 * x + b2 * a), 1.0, -1.0)
            nxt = self._observe(x2, x, a, rng)
            return np.zeros(n), nxt
        if stage == 2:
            x1, a1 = states[:, -2], states[:, -1]
            k = self.params.kappa
            mean = (k[0] + k[1] * x1 + k[2] * a1 + k[3] * x1 * a1 + k[4] * a + k[5] * x * a + k[6] * a1 * a)
            nxt = self._observe(np.zeros(n), x, a, rng)
            return mean + self.params.reward_noise_sd * eps, nxt
        raise IndexError(f"stage {stage} outside 1..2")

    def transition_likelihood(self, stage, states, actions, next_states) -> np.ndarray:
        """P(core next state | state, action); noise factors are omitted since
        they are shared by every parameterization."""
        states = np.atleast_2d(states)
        next_states = np.atleast_2d(next_states)
        if stage == 2:
            return np.ones(len(states))
        p1 = expit(self.params.b1 * states[:, 1] + self.params.b2 * to_sign(actions))
        return np.where(next_states[:, 1] > 0, p1, 1.0 - p1)

    def q_star(self) -> StagewiseQ:
        th = self.theta

        def stage1(s, a):
            return q1_star(th, s[:, 1], to_sign(a))

        def stage2(s, a):
            return q2_star(th, s[:, -2], s[:, -1], s[:, 1], to_sign(a))

        return StagewiseQ(self.spec, [TableQ(stage1, 2), TableQ(stage2, 2)])

    def optimal_mean_value(self) -> float:
        """Exact expected return of the optimal policy: E over X_1 of max_a Q*_1."""
        th = self.theta
        return float(np.mean([max(q1_star(th, x, -1.0), q1_star(th, x, 1.0)) for x in (-1.0, 1.0)]))

    def finite(self) -> "FiniteMdp":
        """Equivalent finite MDP over the core chain (requires noise_dims == 0)."""
        if self.params.noise_dims:
            raise ValueError("finite view requires noise_dims == 0")
        feats = [[1.0, x, 0.0, 0.0] for x in (-1.0, 1.0)]
        feats += [[1.0, x2, x1, a1] for x1 in (-1.0, 1.0) for a1 in (-1.0, 1.0) for x2 in (-1.0, 1.0)]
        feats += [[1.0, 0.0, x2, a2] for x2 in (-1.0, 1.0) for a2 in (-1.0, 1.0)]
        feats = np.array(feats)
        S = len(feats)
        index = {tuple(f): i for i, f in enumerate(feats.tolist())}
        P = np.zeros((2, S, 2, S))
        R = np.zeros((2, S, 2))
        k = self.params.kappa
        b1, b2 = self.params.b1, self.params.b2
        for x1 in (-1.0, 1.0):
            s = index[(1.0, x1, 0.0, 0.0)]
            for ai, a1 in enumerate((-1.0, 1.0)):
                p = expit(b1 * x1 + b2 * a1)
                P[0, s, ai, index[(1.0, 1.0, x1, a1)]] = p
                P[0, s, ai, index[(1.0, -1.0, x1, a1)]] = 1.0 - p
                for x2 in (-1.0, 1.0):
                    s2 = index[(1.0, x2, x1, a1)]
                    for bi, a2 in enumerate((-1.0, 1.0)):
                        R[1, s2, bi] = (k[0] + k[1] * x1 + k[2] * a1 + k[3] * x1 * a1
                                        + k[4] * a2 + k[5] * x2 * a2 + k[6] * a1 * a2)
                        P[1, s2, bi, index[(1.0, 0.0, x2, a2)]] = 1.0
        # rows of unreachable (stage, state) pairs: self-loops keep every row a distribution
        for t in range(2):
            for s in range(S):
                for a in range(2):
                    if P[t, s, a].sum() == 0:
                        P[t, s, a, s] = 1.0
        init = np.zeros(S)
        init[:2] = 0.5
        return FiniteMdp(feats, init, P, R, self.params.reward_noise_sd, self.spec.discount)


def make_two_stage(params: TwoStageParams | None = None, gamma: float = 1.0) -> TwoStageEnv:
    return TwoStageEnv(params or TwoStageParams(), gamma)


# ---------------------------------------------------------------------------
# finite tabular MDPs


class FiniteMdp(Environment):
    """Tabular MDP with stage-dependent transition and mean-reward tables.

    ``features[i]`` is the observed vector of state ``i``; ``P[t, s, a, s']``
    and ``R[t, s, a]`` use 0-based stage index ``t``.
    """

    def __init__(self, features, init, P, R, reward_sd: float = 0.0, gamma: float = 1.0):
        self.features = np.asarray(features, dtype=float)
        self.init = np.asarray(init, dtype=float)
        self.P = np.asarray(P, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.reward_sd = float(reward_sd)
        T, S, J, S2 = self.P.shape
        if S != S2 or self.features.shape[0] != S or self.R.shape != (T, S, J) or self.init.shape != (S,):
            raise StructureError("inconsistent finite MDP tables")
        if not np.allclose(self.P.sum(axis=-1), 1.0, atol=1e-9) or abs(self.init.sum() - 1) > 1e-9:
            raise ValueError("transition rows and initial distribution must sum to 1")
        self.spec = MdpSpec(self.features.shape[1], J, T, gamma)
        self._index = {tuple(f): i for i, f in enumerate(self.features.tolist())}
        if len(self._index) != S:
            raise StructureError("state features must be distinct")

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    def index_of(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        try:
            return np.array([self._index[tuple(s)] for s in states.tolist()], dtype=int)
        except KeyError as exc:
            raise StructureError(f"unknown state {exc.args[0]}") from None

    def reset(self, rng, n=1):
        u = rng.random(n)
        idx = np.minimum(np.searchsorted(np.cumsum(self.init), u, side="right"), self.n_states - 1)
        return self.features[idx]

    def step(self, stage, states, actions, rng):
        self.spec.check_stage(stage)
        s = self.index_of(states)
        a = np.asarray(actions, dtype=int)
        u = rng.random(len(s))
        eps = rng.standard_normal(len(s))
        cdf = np.cumsum(self.P[stage - 1, s, a], axis=1)
        nxt = np.minimum((cdf <= u[:, None]).sum(axis=1), self.n_states - 1)
        rewards = self.R[stage - 1, s, a] + self.reward_sd * eps
        return rewards, self.features[nxt]

    def transition_likelihood(self, stage, states, actions, next_states) -> np.ndarray:
        return self.P[stage - 1, self.index_of(states), np.asarray(actions, dtype=int), self.index_of(next_states)]

    def transition_table(self, stage: int) -> np.ndarray:
        return self.P[stage - 1]

    def optimal_q_table(self) -> np.ndarray:
        """Q*[t, s, a] by backward induction (Q*_{T+1} = 0)."""
        T, S, J = self.R.shape
        Q = np.zeros((T + 1, S, J))
        for t in range(T - 1, -1, -1):
            Q[t] = self.R[t] + self.spec.discount * self.P[t] @ Q[t + 1].max(axis=1)
        return Q[:T]

    def state_action_marginals(self, policy_probs=None) -> np.ndarray:
        """Occupancy Pr(S_t = s, A_t = a) under a stage-wise stochastic policy
        (default: uniform over actions), shape (T, S, J)."""
        T, S, J = self.R.shape
        pi = np.full((T, S, J), 1.0 / J) if policy_probs is None else np.asarray(policy_probs, dtype=float)
        occ = np.zeros((T, S, J))
        dist = self.init.copy()
        for t in range(T):
            occ[t] = dist[:, None] * pi[t]
            dist = np.einsum("sa,sap->p", occ[t], self.P[t])
        return occ

    def table_q(self, table: np.ndarray) -> StagewiseQ:
        """Wrap a (T, S, J) array as a StagewiseQ over observed features."""
        per = [TableQ(lambda s, a, t=t: table[t][self.index_of(s), np.asarray(a, dtype=int)], self.spec.action_count)
               for t in range(self.spec.horizon)]
        return StagewiseQ(self.spec, per)

    def q_star(self) -> StagewiseQ:
        return self.table_q(self.optimal_q_table())


def constant_reward_chain(horizon: int = 3, reward: float = 1.0, action_count: int = 2) -> FiniteMdp:
    """Single-state deterministic MDP paying ``reward`` every stage."""
    P = np.ones((horizon, 1, action_count, 1))
    R = np.full((horizon, 1, action_count), reward)
    return FiniteMdp([[0.0]], [1.0], P, R, 0.0, 1.0)


def expit_testbed(b1: float = 1.0, b2: float = 1.0) -> FiniteMdp:
    """One-step binary chain: X ~ +/-1 uniformly, Pr(X' = 1 | X, A) = expit(b1 X + b2 A).

    States are the scalar X; the action index maps to A = +/-1.
    """
    feats = np.array([[-1.0], [1.0]])
    P = np.zeros((1, 2, 2, 2))
    for si, x in enumerate((-1.0, 1.0)):
        for ai, a in enumerate((-1.0, 1.0)):
            p = expit(b1 * x + b2 * a)
            P[0, si, ai] = (1.0 - p, p)
    return FiniteMdp(feats, [0.5, 0.5], P, np.zeros((1, 2, 2)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# sampling


def sample_trajectories(env: Environment, policy, n: int, rng: np.random.Generator, task: int = 0) -> Dataset:
    """Roll out ``n`` independent trajectories under ``policy(stage, states, rng)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    T, d = env.spec.horizon, env.spec.state_dim
    states = np.empty((n, T + 1, d))
    actions = np.empty((n, T), dtype=int)
    rewards = np.empty((n, T))
    s = env.reset(rng, n)
    for t in range(T):
        states[:, t] = s
        a = np.asarray(policy(t + 1, s, rng), dtype=int)
        r, s = env.step(t + 1, s, a, rng)
        actions[:, t] = a
        rewards[:, t] = r
    states[:, T] = s
    return Dataset(states, actions, rewards, task)


def strip_noise(ds: Dataset, env: TwoStageEnv) -> Dataset:
    """Keep only the core columns of a two-stage dataset."""
    return Dataset(ds.states[:, :, env.core_cols], ds.actions, ds.rewards, ds.task)


# ---------------------------------------------------------------------------
# config


def params_from_config(section) -> tuple[TwoStageParams, int]:
    """Read b1, b2, kappa (comma list or kappa1..kappa7), noise_dims, seed."""
    get = section.get
    if "kappa" in section:
        kappa = tuple(float(v) for v in str(get("kappa")).split(","))
    else:
        kappa = tuple(float(get(f"kappa{j}", 1.0)) for j in range(1, 8))
    params = TwoStageParams(b1=float(get("b1", 1.0)), b2=float(get("b2", 1.0)), kappa=kappa,
                            noise_dims=int(get("noise_dims", 29)),
                            reward_noise_sd=float(get("reward_noise_sd", 1.0)))
    return params, int(get("seed", 0))


def load_env_config(path, section: str = "env") -> tuple[TwoStageParams, int]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    if section not in cp:
        raise KeyError(f"missing [{section}] section in {path}")
    return params_from_config(cp[section])
