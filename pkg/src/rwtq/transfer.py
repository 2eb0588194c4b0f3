"""Re-weighted targeting (RWT) transfer Q-learning.

Per stage, from t = T down to 1: source transitions get pseudo-responses
``r + gamma * w * max_a Q_{t+1}(s', a)`` where ``w`` is the target/source
transition-density ratio and ``Q_{t+1}`` is the frozen, debiased target
estimate; a pooled regression is fitted on them, then a (simpler) debias
regression is fitted on the target residuals, and the two are summed.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import approx as ap
from . import density as dn
from .backward import ApproxSettings, as_dataset, derive_seed, fit_q_stage, stage_responses
from .mdp import Dataset, MdpSpec, QFunction, StagewiseQ, StructureError, SumQ, default_action_codes

MODES = ("identity", "estimated-no-transfer", "estimated-with-transfer", "exact-oracle")


class DegenerateTransferError(ValueError):
    """Transfer was requested without any source data."""


@dataclass(frozen=True)
class DensitySettings:
    """How transition densities are estimated for the weight modes that need them.

    ``columns`` picks the state coordinates the density sees (e.g. the core
    chain of an environment with nuisance covariates).  ``ratio_kind`` is the
    class of the learned ratio under density transfer.
    """

    domain: object
    columns: tuple | None = None
    kind: str = "tabular"
    net: ap.NetConfig | None = None
    train: ap.TrainConfig = field(default_factory=ap.TrainConfig)
    ratio_kind: str = "constant"
    ratio_net: ap.NetConfig | None = None
    normalize: bool = False
    seed: int = 0


@dataclass(frozen=True)
class WeightMode:
    mode: str = "identity"
    truncation_floor: float = 0.05
    upper_bound: float | None = None  # density upper bound; caps weights at upper/floor
    density: DensitySettings | None = None
    oracle: Callable | None = None  # (task, stage) -> ratio function, for "exact-oracle"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if not self.truncation_floor > 0:
            raise ValueError("truncation_floor must be positive")
        if self.mode.startswith("estimated") and self.density is None:
            raise ValueError(f"{self.mode} needs DensitySettings")
        if self.mode == "exact-oracle" and self.oracle is None:
            raise ValueError("exact-oracle needs an oracle ratio provider")

    @property
    def cap(self) -> float | None:
        return None if self.upper_bound is None else self.upper_bound / self.truncation_floor


@dataclass(frozen=True)
class RwtSample:
    stage: int
    state: np.ndarray
    action: int
    pseudo_response: float
    weight: float
    task: int


@dataclass
class TransferResult:
    q_pooled: StagewiseQ
    delta: StagewiseQ
    q_final: StagewiseQ
    weights: dict = field(default_factory=dict)


def rwt_pseudo_response(reward, next_state, q_next: Callable | None, weight, gamma: float):
    """r + gamma * weight * max_a q_next(s', a); ``q_next=None`` is Q_{T+1} = 0."""
    weight = np.asarray(weight, dtype=float)
    if np.any(weight < 0) or not np.all(np.isfinite(weight)):
        raise ValueError("weights must be finite and non-negative")
    reward = np.asarray(reward, dtype=float)
    if q_next is None or gamma == 0:
        return reward.copy() if reward.ndim else float(reward)
    future = q_next(np.atleast_2d(next_state)).max(axis=1)
    out = reward + gamma * weight * (future if reward.ndim else future[0])
    return out if reward.ndim else float(out)


# ---------------------------------------------------------------------------
# weights


def _cols(states, columns):
    return states if columns is None else states[:, list(columns)]


def estimate_ratios(target: Dataset, sources: Mapping[int, Dataset], spec: MdpSpec,
                    mode: WeightMode) -> dict:
    """Ratio functions keyed by (task, stage) for stages 1..T-1.

    Stage T needs none: the future term vanishes there.
    """
    out = {}
    if mode.mode == "identity":
        return out
    if mode.mode == "exact-oracle":
        for k in sources:
            for t in range(1, spec.horizon):
                out[k, t] = mode.oracle(k, t)
        return out
    ds = mode.density
    target_models = {}
    for t in range(1, spec.horizon):
        sl = target.stage(t)
        target_models[t] = _fit_density(sl, ds, spec, derive_seed(ds.seed, 0, t))
    for k, src in sources.items():
        for t in range(1, spec.horizon):
            sl = src.stage(t)
            src_model = _fit_density(sl, ds, spec, derive_seed(ds.seed, k, t))
            if mode.mode == "estimated-no-transfer":
                ratio = dn.ratio_no_transfer(target_models[t], src_model, mode.truncation_floor)
            else:
                tsl = target.stage(t)
                ratio = dn.ratio_with_transfer(src_model, _cols(tsl.states, ds.columns), tsl.actions,
                                               _cols(tsl.next_states, ds.columns), ds.ratio_kind, ds.ratio_net,
                                               ds.train, derive_seed(ds.seed, k, t, 1), mode.truncation_floor)
            out[k, t] = _ProjectedRatio(ratio, ds.columns)
    return out


def _fit_density(sl, ds: DensitySettings, spec: MdpSpec, seed: int) -> dn.DensityModel:
    model = dn.estimate_conditional_density(_cols(sl.states, ds.columns), sl.actions,
                                            _cols(sl.next_states, ds.columns), ds.domain, ds.kind, ds.net,
                                            ds.train, seed, action_count=spec.action_count)
    return dn.normalize_density(model) if ds.normalize else model


@dataclass
class _ProjectedRatio:
    ratio: Callable
    columns: tuple | None

    def __call__(self, states, actions, next_states):
        return self.ratio(_cols(np.atleast_2d(states), self.columns), actions,
                          _cols(np.atleast_2d(next_states), self.columns))


# ---------------------------------------------------------------------------
# the transfer fit


class _ZeroQ:
    """Identically-zero Q component (debias class forced to zero)."""

    def __init__(self, action_count):
        self.action_count = action_count

    def __call__(self, states, actions):
        return np.zeros(len(np.atleast_2d(states)))

    def values(self, states):
        return np.zeros((len(np.atleast_2d(states)), self.action_count))


def fit_transfer(target, sources: Mapping[int, Dataset], spec: MdpSpec, weight_mode: WeightMode | None = None,
                 pooled: ApproxSettings | None = None, debias: ApproxSettings | None = None,
                 pool_includes_target: bool = True, zero_delta: bool = False, action_codes=None,
                 trace: list | None = None) -> TransferResult:
    """Backward RWT transfer Q-learning.

    ``pooled`` configures the class for the pooled fit; ``debias`` the class
    for the residual fit (default: same kind with a half-width network).
    ``trace`` (optional) receives ``(stage, role, id(q_used))`` tuples for
    each stage+1 evaluation, for testing which estimate feeds the recursion.
    """
    target = as_dataset(target)
    if target.n == 0:
        raise ValueError("empty target data")
    sources = {k: as_dataset(v) for k, v in sources.items()}
    if not sources:
        raise DegenerateTransferError("no source data; use fit_single_task")
    if 0 in sources:
        raise ValueError("task id 0 is reserved for the target")
    for ds in [target, *sources.values()]:
        if ds.horizon != spec.horizon or ds.state_dim != spec.state_dim:
            raise StructureError("dataset does not match the MDP spec")
    weight_mode = weight_mode or WeightMode()
    pooled = pooled or ApproxSettings()
    if debias is None:
        simpler = pooled.net.simpler() if pooled.net is not None else None
        debias = ApproxSettings(pooled.kind, simpler, pooled.train, pooled.seed + 1)
    codes = default_action_codes(spec.action_count) if action_codes is None else np.asarray(action_codes, float)
    ratios = estimate_ratios(target, sources, spec, weight_mode)
    cap = weight_mode.cap

    T = spec.horizon
    pooled_stages: list = [None] * T
    delta_stages: list = [None] * T
    final_stages: list = [None] * T
    q_final = StagewiseQ.__new__(StagewiseQ)
    q_final.spec, q_final.per_stage = spec, final_stages
    for t in range(T, 0, -1):
        q_next = (lambda s, t=t: q_final.values(t + 1, s)) if t < T else None
        if trace is not None and t < T:
            trace.append((t, "uses", id(final_stages[t])))
        X_parts, y_parts = [], []
        tsl = target.stage(t)
        y0 = stage_responses(q_final, t, tsl.rewards, tsl.next_states, spec.discount)
        if pool_includes_target:
            X_parts.append((tsl.states, tsl.actions))
            y_parts.append(y0)
        for k, src in sources.items():
            sl = src.stage(t)
            if (k, t) in ratios:
                w = np.asarray(ratios[k, t](sl.states, sl.actions, sl.next_states), dtype=float)
            else:
                w = np.ones(len(sl))
            if cap is not None:
                w = np.minimum(w, cap)
            y_k = rwt_pseudo_response(sl.rewards, sl.next_states, q_next, w, spec.discount)
            X_parts.append((sl.states, sl.actions))
            y_parts.append(y_k)
        states = np.vstack([p[0] for p in X_parts])
        actions = np.concatenate([p[1] for p in X_parts])
        y = np.concatenate(y_parts)
        qp = fit_q_stage(states, actions, y, pooled, codes, t, role=0)
        residual = y0 - qp(tsl.states, tsl.actions)
        if zero_delta:
            delta = _ZeroQ(spec.action_count)
        else:
            delta = fit_q_stage(tsl.states, tsl.actions, residual, debias, codes, t, role=1)
        pooled_stages[t - 1] = qp
        delta_stages[t - 1] = delta
        final_stages[t - 1] = SumQ((qp, delta))
    return TransferResult(StagewiseQ(spec, pooled_stages), StagewiseQ(spec, delta_stages),
                          StagewiseQ(spec, final_stages), ratios)


def rwt_samples(target: Dataset, sources: Mapping[int, Dataset], q_next: StagewiseQ, stage: int,
                ratios: Mapping | None = None) -> list[RwtSample]:
    """Record view of the stage-``stage`` RWT samples (target rows carry weight 1)."""
    spec = q_next.spec
    out = []
    nxt = (lambda s: q_next.values(stage + 1, s)) if stage < spec.horizon else None
    for k, ds in [(0, target), *sources.items()]:
        sl = ds.stage(stage)
        w = np.ones(len(sl)) if k == 0 or not ratios or (k, stage) not in ratios else \
            np.asarray(ratios[k, stage](sl.states, sl.actions, sl.next_states), dtype=float)
        y = rwt_pseudo_response(sl.rewards, sl.next_states, nxt, w, spec.discount)
        out += [RwtSample(stage, sl.states[i], int(sl.actions[i]), float(y[i]), float(w[i]), k)
                for i in range(len(sl))]
    return out


# ---------------------------------------------------------------------------
# exact aggregate oracle


def aggregate_q_reference(target, sources, mixing_weights, policy_probs=None) -> np.ndarray:
    """Aggregated Q on finite MDPs, shape (T, S, J).

    Q_agg_t(s, a) = sum_k vbar_t^k(s, a) E^k[r_t + gamma * w_t^k * max_a' Q*_{0,t+1}(s', a')]
                  = r_agg_t(s, a) + gamma * E^0[max_a' Q*_{0,t+1}(s', a') | s, a]

    where vbar_t^k(s, a) is proportional to upsilon_k * Pr^k(S_t = s, A_t = a)
    under the behavior policy (uniform by default).  Pairs that no source
    visits get the plain mixture.
    """
    from .envs import FiniteMdp

    if not isinstance(target, FiniteMdp) or not all(isinstance(s, FiniteMdp) for s in sources):
        raise TypeError("aggregate_q_reference needs finite MDPs")
    ups = np.asarray(mixing_weights, dtype=float)
    if ups.shape != (len(sources),) or np.any(ups < 0) or abs(ups.sum() - 1.0) > 1e-12:
        raise ValueError("mixing weights must be non-negative and sum to 1")
    T, S, J = target.R.shape
    gamma = target.spec.discount
    q0 = target.optimal_q_table()
    v_next = np.zeros((T + 1, S))
    v_next[:T] = q0.max(axis=2)
    v_next[T] = 0.0
    occ = np.array([src.state_action_marginals(policy_probs) for src in sources])  # (K, T, S, J)
    joint = ups[:, None, None, None] * occ
    tot = joint.sum(axis=0)
    vbar = np.where(tot > 0, joint / np.where(tot > 0, tot, 1.0), ups[:, None, None, None])
    r_agg = np.einsum("ktsa,ktsa->tsa", vbar, np.array([src.R for src in sources]))
    future = np.stack([target.P[t] @ v_next[t + 1] for t in range(T)])
    return r_agg + gamma * future


# ---------------------------------------------------------------------------
# persistence


def save_stagewise(q: StagewiseQ, directory, prefix: str) -> list[str]:
    """Write one approximator file per stage; returns the file names."""
    names = []
    for t, part in enumerate(q.per_stage, start=1):
        if not isinstance(part, QFunction):
            raise TypeError("only fitted QFunction stages can be saved")
        name = f"{prefix}_stage{t}.txt"
        part.approx.save(os.path.join(directory, name))
        names.append(name)
    return names


def load_stagewise(directory, spec: MdpSpec, names, action_codes) -> StagewiseQ:
    return StagewiseQ(spec, [QFunction(ap.load(os.path.join(directory, n)), np.asarray(action_codes, float))
                             for n in names])


def save_transfer(result: TransferResult, directory, extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    spec = result.q_final.spec
    codes = result.q_pooled.per_stage[0].action_codes
    manifest = {
        "spec": asdict(spec),
        "action_codes": [float(c) for c in codes],
        "pooled": save_stagewise(result.q_pooled, directory, "pooled"),
        "delta": save_stagewise(result.delta, directory, "delta"),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_transfer(directory) -> TransferResult:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    spec = MdpSpec(**manifest["spec"])
    codes = manifest["action_codes"]
    qp = load_stagewise(directory, spec, manifest["pooled"], codes)
    dl = load_stagewise(directory, spec, manifest["delta"], codes)
    final = StagewiseQ(spec, [SumQ((a, b)) for a, b in zip(qp.per_stage, dl.per_stage)])
    return TransferResult(qp, dl, final)
