"""Finite-horizon MDP data types, Q-function containers and dataset I/O.

Datasets are stored column-wise (``Dataset``: states of shape (n, T+1, d),
actions/rewards of shape (n, T)); ``TransitionTuple`` and ``Trajectory`` are
the record views of the same data.  Stages are 1-based throughout the public
API, actions are integer indices ``0..J-1``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .approx import Approximator


class StructureError(ValueError):
    """Data does not have the shape the MDP requires."""


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_count: int
    horizon: int
    discount: float = 1.0

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if self.action_count < 2:
            raise ValueError("action_count must be >= 2")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")

    def check_stage(self, stage: int) -> None:
        if not 1 <= stage <= self.horizon:
            raise IndexError(f"stage {stage} outside 1..{self.horizon}")


@dataclass(frozen=True)
class TransitionTuple:
    stage: int
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    task: int = 0


@dataclass(frozen=True)
class Trajectory:
    tuples: tuple

    def __post_init__(self):
        tuples = self.tuples
        for prev, nxt in zip(tuples, tuples[1:]):
            if nxt.stage != prev.stage + 1:
                raise StructureError("trajectory stages must increase by one")
            if nxt.task != prev.task:
                raise StructureError("trajectory mixes task ids")
            if not np.array_equal(prev.next_state, nxt.state):
                raise StructureError("next_state does not match the following state")

    @property
    def task(self) -> int:
        return self.tuples[0].task if self.tuples else 0

    def __len__(self):
        return len(self.tuples)


@dataclass(frozen=True)
class StageSlice:
    """All transitions of one stage, as aligned arrays."""

    stage: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    task: int = 0

    def __len__(self):
        return len(self.actions)

    def tuples(self) -> list[TransitionTuple]:
        return [TransitionTuple(self.stage, self.states[i], int(self.actions[i]), float(self.rewards[i]),
                                self.next_states[i], self.task) for i in range(len(self))]


@dataclass(frozen=True)
class Dataset:
    """n aligned trajectories of one task."""

    states: np.ndarray  # (n, T+1, d); states[:, T] is the terminal next state
    actions: np.ndarray  # (n, T) int
    rewards: np.ndarray  # (n, T)
    task: int = 0

    def __post_init__(self):
        s, a, r = self.states, self.actions, self.rewards
        if s.ndim != 3 or a.ndim != 2 or r.shape != a.shape or s.shape[:2] != (a.shape[0], a.shape[1] + 1):
            raise StructureError("inconsistent dataset array shapes")

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def __len__(self):
        return self.n

    def stage(self, stage: int) -> StageSlice:
        if not 1 <= stage <= self.horizon:
            raise StructureError(f"dataset has no stage {stage}")
        t = stage - 1
        return StageSlice(stage, self.states[:, t], self.actions[:, t], self.rewards[:, t],
                          self.states[:, t + 1], self.task)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(tuple(TransitionTuple(t + 1, self.states[i, t], int(self.actions[i, t]),
                                                float(self.rewards[i, t]), self.states[i, t + 1], self.task)
                                for t in range(self.horizon)))

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n)]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.states[:n], self.actions[:n], self.rewards[:n], self.task)

    def with_task(self, task: int) -> "Dataset":
        return Dataset(self.states, self.actions, self.rewards, task)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "Dataset":
        if not trajectories:
            raise ValueError("no trajectories")
        T = len(trajectories[0])
        if any(len(tr) != T for tr in trajectories):
            raise StructureError("ragged trajectories are not supported")
        tasks = {tr.task for tr in trajectories}
        if len(tasks) != 1:
            raise StructureError("trajectories from several tasks")
        states = np.array([[tp.state for tp in tr.tuples] + [tr.tuples[-1].next_state] for tr in trajectories],
                          dtype=float)
        actions = np.array([[tp.action for tp in tr.tuples] for tr in trajectories], dtype=int)
        rewards = np.array([[tp.reward for tp in tr.tuples] for tr in trajectories], dtype=float)
        return cls(states, actions, rewards, tasks.pop())


def slice_stage(trajectories: Iterable[Trajectory], stage: int) -> list[TransitionTuple]:
    """The stage-``stage`` tuple of every trajectory, in input order."""
    out = []
    for tr in trajectories:
        match = [tp for tp in tr.tuples if tp.stage == stage]
        if len(match) != 1:
            raise StructureError(f"trajectory lacks stage {stage}")
        out.append(match[0])
    return out


# ---------------------------------------------------------------------------
# Q-functions


def default_action_codes(action_count: int) -> np.ndarray:
    """Scalar action codes fed to approximators: evenly spaced on [-1, 1]."""
    return np.linspace(-1.0, 1.0, action_count)


@dataclass
class QFunction:
    """Q(s, a) = approx([s, code(a)])."""

    approx: Approximator
    action_codes: np.ndarray

    def features(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        codes = self.action_codes[np.asarray(actions, dtype=int)]
        return np.column_stack([states, codes])

    def __call__(self, states, actions) -> np.ndarray:
        return self.approx.predict(self.features(states, actions))

    def values(self, states) -> np.ndarray:
        """Matrix of Q(s, a) for every action, shape (n, J)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        n, J = len(states), len(self.action_codes)
        feats = np.column_stack([np.repeat(states, J, axis=0), np.tile(self.action_codes, n)])
        return self.approx.predict(feats).reshape(n, J)


@dataclass
class SumQ:
    """Pointwise sum of Q-like components (pooled fit plus debias term)."""

    parts: tuple

    def __call__(self, states, actions):
        return sum(p(states, actions) for p in self.parts)

    def values(self, states):
        return sum(p.values(states) for p in self.parts)


@dataclass
class TableQ:
    """Q given as an explicit function of (states, actions) -> values; used by oracles."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    action_count: int

    def __call__(self, states, actions):
        return np.asarray(self.fn(np.atleast_2d(states), np.asarray(actions)), dtype=float)

    def values(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        n = len(states)
        return np.column_stack([self(states, np.full(n, a)) for a in range(self.action_count)])


@dataclass
class StagewiseQ:
    spec: MdpSpec
    per_stage: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.per_stage) != self.spec.horizon:
            raise StructureError("one Q-function per stage is required")

    def values(self, stage: int, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if stage == self.spec.horizon + 1:
            return np.zeros((len(states), self.spec.action_count))
        self.spec.check_stage(stage)
        return self.per_stage[stage - 1].values(states)

    def __call__(self, stage: int, states, actions) -> np.ndarray:
        vals = self.values(stage, states)
        return vals[np.arange(len(vals)), np.asarray(actions, dtype=int)]

    def max_value(self, stage: int, states) -> np.ndarray:
        return self.values(stage, states).max(axis=1)


def greedy_actions(q: StagewiseQ, stage: int, states) -> np.ndarray:
    """Row-wise argmax; ties go to the smallest action index."""
    q.spec.check_stage(stage)
    return np.argmax(q.values(stage, states), axis=1)


def greedy_action(q: StagewiseQ, stage: int, state) -> int:
    state = np.asarray(state, dtype=float)
    if state.shape != (q.spec.state_dim,):
        raise StructureError(f"state must have length {q.spec.state_dim}")
    return int(greedy_actions(q, stage, state[None, :])[0])


# ---------------------------------------------------------------------------
# policies: callables (stage, states, rng) -> action indices


def greedy_policy(q: StagewiseQ):
    def act(stage, states, rng=None):
        return greedy_actions(q, stage, states)
    return act


def uniform_policy(action_count: int):
    def act(stage, states, rng):
        return rng.integers(0, action_count, size=len(states))
    return act


def action_distribution(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("action weights must be non-negative and sum to 1")
    return w


# ---------------------------------------------------------------------------
# text format: task,stage,action,reward,state...,next_state...


def write_dataset(datasets: Sequence[Dataset], path) -> None:
    d = datasets[0].state_dim
    header = ["task", "stage", "action", "reward"] + [f"s{j}" for j in range(d)] + [f"ns{j}" for j in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for ds in datasets:
            for i in range(ds.n):
                for t in range(ds.horizon):
                    w.writerow([ds.task, t + 1, int(ds.actions[i, t]), repr(float(ds.rewards[i, t]))]
                               + [repr(float(v)) for v in ds.states[i, t]]
                               + [repr(float(v)) for v in ds.states[i, t + 1]])


def read_dataset(path, horizon: int) -> dict[int, Dataset]:
    """Parse the text format back into one Dataset per task.

    Rows must be grouped trajectory by trajectory, stages 1..horizon in order.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StructureError("empty dataset file")
    header, body = rows[0], rows[1:]
    d = (len(header) - 4) // 2
    if header[:4] != ["task", "stage", "action", "reward"] or len(header) != 4 + 2 * d:
        raise StructureError("unexpected dataset header")
    if len(body) % horizon:
        raise StructureError("row count is not a multiple of the horizon")
    by_task: dict[int, list[Trajectory]] = {}
    for start in range(0, len(body), horizon):
        tps = []
        for row in body[start:start + horizon]:
            vals = [float(v) for v in row[4:]]
            tps.append(TransitionTuple(int(row[1]), np.array(vals[:d]), int(row[2]), float(row[3]),
                                       np.array(vals[d:]), int(row[0])))
        if [tp.stage for tp in tps] != list(range(1, horizon + 1)):
            raise StructureError("rows are not grouped by trajectory")
        tr = Trajectory(tuple(tps))
        by_task.setdefault(tr.task, []).append(tr)
    return {k: Dataset.from_trajectories(v) for k, v in sorted(by_task.items())}
