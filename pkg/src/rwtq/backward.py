"""Single-task backward-inductive Q-learning (the no-transfer baseline)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import approx as ap
from .mdp import Dataset, MdpSpec, QFunction, StagewiseQ, StructureError, Trajectory, default_action_codes


@dataclass(frozen=True)
class PseudoSample:
    stage: int
    state: np.ndarray
    action: int
    pseudo_response: float


@dataclass(frozen=True)
class ApproxSettings:
    """How each stage's regression is fitted.

    ``net`` is a template: its ``input_dim`` is overwritten with
    ``state_dim + 1`` and its seed is derived per stage and role.
    """

    kind: str = "relu-net"
    net: ap.NetConfig | None = None
    train: ap.TrainConfig = field(default_factory=ap.TrainConfig)
    seed: int = 0

    def net_for(self, input_dim: int, stage: int, role: int = 0) -> ap.NetConfig | None:
        if self.kind != "relu-net":
            return None
        base = self.net or ap.NetConfig(input_dim=input_dim)
        return replace(base, input_dim=input_dim, seed=derive_seed(self.seed, stage, role, 0))

    def train_for(self, stage: int, role: int = 0) -> ap.TrainConfig:
        return replace(self.train, seed=derive_seed(self.seed, stage, role, 1))


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def pseudo_response(reward, next_state, q_next: Callable | None, gamma: float):
    """r + gamma * max_a q_next(s', a).

    ``q_next(states)`` returns the (n, J) action-value matrix of the next
    stage; ``None`` stands for the identically-zero Q_{T+1}.
    """
    reward = np.asarray(reward, dtype=float)
    if q_next is None or gamma == 0:
        return reward.copy() if reward.ndim else float(reward)
    nxt = np.atleast_2d(next_state)
    future = q_next(nxt).max(axis=1)
    out = reward + gamma * (future if reward.ndim else future[0])
    return out if reward.ndim else float(out)


def stage_responses(q: StagewiseQ, stage: int, rewards, next_states, gamma: float) -> np.ndarray:
    """Pseudo-responses for a whole stage slice using the frozen stage+1 estimate."""
    if stage == q.spec.horizon:
        return np.asarray(rewards, dtype=float).copy()
    return pseudo_response(rewards, next_states, lambda s: q.values(stage + 1, s), gamma)


def fit_q_stage(states, actions, y, settings: ApproxSettings, action_codes, stage: int, role: int = 0,
                net: ap.NetConfig | None = None) -> QFunction:
    """Regress ``y`` on (state, action) and wrap the fit as a QFunction."""
    feats = np.column_stack([states, action_codes[np.asarray(actions, dtype=int)]])
    cfg = net if net is not None else settings.net_for(feats.shape[1], stage, role)
    fitted = ap.fit_least_squares(feats, y, settings.kind, cfg, settings.train_for(stage, role))
    return QFunction(fitted, action_codes)


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    data = list(data)
    if not data:
        raise ValueError("no trajectories")
    if isinstance(data[0], Trajectory):
        return Dataset.from_trajectories(data)
    raise TypeError("expected a Dataset or a sequence of Trajectory")


def fit_single_task(data: Dataset | Sequence[Trajectory], spec: MdpSpec, settings: ApproxSettings,
                    action_codes=None) -> StagewiseQ:
    """Backward induction on one task: fit Q_T on rewards, then Q_t on
    r_t + gamma * max_a Q_{t+1}(s_{t+1}, a) for t = T-1, ..., 1."""
    ds = as_dataset(data)
    if ds.n == 0:
        raise ValueError("no trajectories")
    if ds.horizon != spec.horizon or ds.state_dim != spec.state_dim:
        raise StructureError("dataset does not match the MDP spec")
    codes = default_action_codes(spec.action_count) if action_codes is None else np.asarray(action_codes, float)
    per_stage: list = [None] * spec.horizon
    q = StagewiseQ.__new__(StagewiseQ)
    q.spec, q.per_stage = spec, per_stage  # filled from the last stage backwards
    for t in range(spec.horizon, 0, -1):
        sl = ds.stage(t)
        y = stage_responses(q, t, sl.rewards, sl.next_states, spec.discount)
        per_stage[t - 1] = fit_q_stage(sl.states, sl.actions, y, settings, codes, t)
    return StagewiseQ(spec, per_stage)
