"""Conditional transition densities and transition-density ratios.

A density model is an approximator g(s, a, s') fitted by minimizing the
square-loss contrast

    (1/2n) sum_i int g(s_i, a_i, s')^2 ds'  -  (1/n) sum_i g(s_i, a_i, s'_i),

with the integral replaced by one uniform draw per data point on a bounded
box, or by an exact sum over the states of a finite domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import approx as ap
from .mdp import default_action_codes


class DegenerateDensityError(ValueError):
    """A density slice is non-positive everywhere and cannot be normalized."""


class UnsupportedDomainError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteDomain:
    points: np.ndarray  # (m, d)

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __eq__(self, other):
        return isinstance(other, FiniteDomain) and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True)
class BoxDomain:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise UnsupportedDomainError("state domain must be a bounded box")
        if np.any(high <= low):
            raise UnsupportedDomainError("box must have positive side lengths")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.high - self.low))

    def sample(self, rng, n) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def __eq__(self, other):
        return (isinstance(other, BoxDomain) and np.array_equal(self.low, other.low)
                and np.array_equal(self.high, other.high))

    __hash__ = None


def _features(states, actions, next_states, codes):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    return np.column_stack([states, codes[np.asarray(actions, dtype=int)], next_states])


@dataclass
class DensityModel:
    """rho(s, a, s') approximated by ``approx`` on [s, code(a), s'] rows."""

    approx: ap.Approximator
    domain: FiniteDomain | BoxDomain
    action_codes: np.ndarray
    normalized: bool = False
    mc_samples: int = 10_000
    mc_seed: int = 0
    _norm_cache: dict = field(default_factory=dict, repr=False)

    def raw(self, states, actions, next_states) -> np.ndarray:
        return self.approx.predict(_features(states, actions, next_states, self.action_codes))

    def __call__(self, states, actions, next_states) -> np.ndarray:
        vals = self.raw(states, actions, next_states)
        if not self.normalized:
            return vals
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_1d(np.asarray(actions, dtype=int))
        return np.maximum(vals, 0.0) * self.norm_constants(states, actions)

    def slice_mass(self, states, actions) -> np.ndarray:
        """int max(rho(s, a, s'), 0) ds' for each (s, a) row."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_1d(np.asarray(actions, dtype=int))
        n = len(states)
        if isinstance(self.domain, FiniteDomain):
            pts, w = self.domain.points, np.ones(len(self.domain.points))
        else:
            rng = np.random.default_rng(self.mc_seed)
            pts = self.domain.sample(rng, self.mc_samples)
            w = np.full(self.mc_samples, self.domain.volume / self.mc_samples)
        m = len(pts)
        feats = _features(np.repeat(states, m, axis=0), np.repeat(actions, m), np.tile(pts, (n, 1)),
                          self.action_codes)
        vals = np.maximum(self.approx.predict(feats), 0.0).reshape(n, m)
        return vals @ w

    def norm_constants(self, states, actions) -> np.ndarray:
        keys = [tuple(s) + (int(a),) for s, a in zip(states.tolist(), actions.tolist())]
        missing = [i for i, k in enumerate(keys) if k not in self._norm_cache]
        if missing:
            uniq = {}
            for i in missing:
                uniq.setdefault(keys[i], i)
            idx = list(uniq.values())
            mass = self.slice_mass(states[idx], actions[idx])
            for k, mm in zip(uniq, mass):
                self._norm_cache[k] = mm
        mass = np.array([self._norm_cache[k] for k in keys])
        if np.any(mass <= 0):
            raise DegenerateDensityError("density is non-positive on a whole next-state slice")
        return 1.0 / mass


def _check_domain(domain, next_states):
    if isinstance(domain, BoxDomain):
        return
    if not isinstance(domain, FiniteDomain):
        raise UnsupportedDomainError("state_domain must be a FiniteDomain or a bounded BoxDomain")
    if next_states.shape[1] != domain.dim:
        raise ValueError("next-state dimension does not match the domain")


def _contrast_points(states, actions, next_states, domain, rng, codes, multiplier, weight_fn=None):
    """Assemble the squared-term and linear-term evaluation points."""
    n = len(states)
    lin = _features(states, actions, next_states, codes)
    if isinstance(domain, FiniteDomain):
        pts = domain.points
        m = len(pts)
        sq = _features(np.repeat(states, m, axis=0), np.repeat(actions, m), np.tile(pts, (n, 1)), codes)
        w_sq = np.ones(n * m)
    else:
        m = multiplier
        draws = domain.sample(rng, n * m)
        sq = _features(np.repeat(states, m, axis=0), np.repeat(actions, m), draws, codes)
        w_sq = np.full(n * m, domain.volume / m)
    w_lin = np.ones(n)
    if weight_fn is not None:
        w_sq = w_sq * weight_fn(sq) ** 2
        w_lin = weight_fn(lin)
    return sq.reshape(n, m, -1), w_sq.reshape(n, m), lin, w_lin


def estimate_conditional_density(states, actions, next_states, domain, kind: str = "relu-net",
                                 net_config: ap.NetConfig | None = None,
                                 train_config: ap.TrainConfig | None = None, seed: int = 0,
                                 action_codes=None, action_count: int = 2, multiplier: int = 1,
                                 history: list | None = None) -> DensityModel:
    """Fit rho(s, a, s') = p(s' | s, a) for one task and stage."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    actions = np.atleast_1d(np.asarray(actions, dtype=int))
    if len(states) == 0:
        raise ValueError("no transition tuples")
    _check_domain(domain, next_states)
    codes = default_action_codes(action_count) if action_codes is None else np.asarray(action_codes, float)
    rng = np.random.default_rng(seed)
    sq, w_sq, lin, w_lin = _contrast_points(states, actions, next_states, domain, rng, codes, multiplier)
    if kind == "relu-net":
        net_config = replace(net_config or ap.NetConfig(input_dim=lin.shape[1]), input_dim=lin.shape[1])
    fitted = ap.fit_contrast(sq, w_sq, lin, w_lin, kind, net_config, train_config, history=history)
    return DensityModel(fitted, domain, codes, normalized=False, mc_seed=seed)


def normalize_density(model: DensityModel, probe_states=None, probe_actions=None) -> DensityModel:
    """Clamp negatives to zero and rescale each next-state slice to unit mass.

    Normalizing constants for the probe (s, a) pairs are computed up front;
    other pairs are computed on first use and cached.
    """
    if model.normalized:
        raise ValueError("model is already normalized")
    out = DensityModel(model.approx, model.domain, model.action_codes, normalized=True,
                       mc_samples=model.mc_samples, mc_seed=model.mc_seed)
    if probe_states is not None:
        out.norm_constants(np.atleast_2d(np.asarray(probe_states, dtype=float)),
                           np.atleast_1d(np.asarray(probe_actions, dtype=int)))
    return out


# ---------------------------------------------------------------------------
# ratios


@dataclass
class RatioFunction:
    """Transition-density ratio w(s' | s, a).

    Either ``numerator / max(denominator, floor)`` of two density models, or
    a learned ratio ``learned`` (numerator ignored) when density transfer is used.
    Evaluations are clamped below at 0.
    """

    denominator: DensityModel | None
    floor: float
    numerator: DensityModel | None = None
    learned: ap.Approximator | None = None
    action_codes: np.ndarray | None = None
    probe: list | None = None  # instrumentation: denominators actually used

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    def __call__(self, states, actions, next_states) -> np.ndarray:
        if self.learned is not None:
            codes = self.action_codes if self.action_codes is not None else self.denominator.action_codes
            g = self.learned.predict(_features(states, actions, next_states, codes))
            return np.maximum(g, 0.0)
        den = np.maximum(self.denominator(states, actions, next_states), self.floor)
        if self.probe is not None:
            self.probe.append(den.min())
        num = np.maximum(self.numerator(states, actions, next_states), 0.0)
        return num / den


def ratio_no_transfer(target_model: DensityModel, source_model: DensityModel, floor: float = 0.05) -> RatioFunction:
    if target_model.domain != source_model.domain:
        raise ValueError("target and source densities live on different domains")
    if target_model.approx.input_dim != source_model.approx.input_dim:
        raise ValueError("target and source densities take different inputs")
    return RatioFunction(denominator=source_model, floor=floor, numerator=target_model)


def ratio_with_transfer(source_model: DensityModel, states, actions, next_states, kind: str = "relu-net",
                        net_config: ap.NetConfig | None = None, train_config: ap.TrainConfig | None = None,
                        seed: int = 0, floor: float = 0.05, multiplier: int = 1,
                        history: list | None = None) -> RatioFunction:
    """Learn the ratio g directly from target tuples by fitting g * rho_source
    (source density floored at ``floor``) as the target density."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    actions = np.atleast_1d(np.asarray(actions, dtype=int))
    if len(states) == 0:
        raise ValueError("no target tuples")
    domain, codes = source_model.domain, source_model.action_codes
    _check_domain(domain, next_states)
    d = states.shape[1]

    def floored(z):
        return np.maximum(source_model(z[:, :d], _decode(z[:, d], codes), z[:, d + 1:]), floor)

    rng = np.random.default_rng(seed)
    sq, w_sq, lin, w_lin = _contrast_points(states, actions, next_states, domain, rng, codes, multiplier,
                                            weight_fn=floored)
    if kind == "relu-net":
        net_config = replace(net_config or ap.NetConfig(input_dim=lin.shape[1]), input_dim=lin.shape[1])
    g = ap.fit_contrast(sq, w_sq, lin, w_lin, kind, net_config, train_config, history=history)
    return RatioFunction(denominator=source_model, floor=floor, learned=g, action_codes=codes)


def _decode(code_column, codes) -> np.ndarray:
    return np.abs(code_column[:, None] - codes[None, :]).argmin(axis=1)


@dataclass
class TableRatio:
    """Exact ratio table w[s, a, s'] on an enumerated space."""

    table: np.ndarray
    index_of: object = None

    def __call__(self, states, actions, next_states):
        s, sp = self.index_of(states), self.index_of(next_states)
        return self.table[s, np.asarray(actions, dtype=int), sp]


def exact_ratio_finite(target_table, source_table, floor: float = 0.05, index_of=None) -> TableRatio:
    """Pointwise target / max(source, floor) of two conditional-probability tables
    whose last axis is the next state."""
    tgt = np.asarray(target_table, dtype=float)
    src = np.asarray(source_table, dtype=float)
    if tgt.shape != src.shape:
        raise ValueError("tables differ in shape")
    for name, tab in (("target", tgt), ("source", src)):
        if np.any(tab < 0) or not np.allclose(tab.sum(axis=-1), 1.0, rtol=0, atol=1e-9):
            raise ap.DataError(f"{name} rows are not probability distributions")
    if not floor > 0:
        raise ValueError("floor must be positive")
    return TableRatio(tgt / np.maximum(src, floor), index_of)


def finite_cells(domain: FiniteDomain, action_count: int):
    """All (s, a, s') combinations of a finite domain as aligned arrays."""
    pts = domain.points
    m = len(pts)
    si, ai, pi = np.meshgrid(np.arange(m), np.arange(action_count), np.arange(m), indexing="ij")
    si, ai, pi = si.ravel(), ai.ravel(), pi.ravel()
    return pts[si], ai, pts[pi], (si, ai, pi)


def ratio_rmse(ratio, exact: np.ndarray, domain: FiniteDomain, action_count: int = 2) -> float:
    """Root-mean-square error of ``ratio`` against an exact (S, J, S') table over all cells."""
    s, a, sp, (si, ai, pi) = finite_cells(domain, action_count)
    return float(np.sqrt(np.mean((ratio(s, a, sp) - exact[si, ai, pi]) ** 2)))
