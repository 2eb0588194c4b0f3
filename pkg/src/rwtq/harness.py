"""Explore-then-commit evaluation: collect target data with a uniform policy,
fit transfer and single-task Q estimates, deploy both greedily, record
per-episode rewards and regrets against the exact optimal value."""
from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from . import approx as ap
from .backward import ApproxSettings, derive_seed, fit_single_task
from .envs import TwoStageEnv, TwoStageParams, make_two_stage, params_from_config, sample_trajectories
from .mdp import MdpSpec, QFunction, StagewiseQ, greedy_policy, uniform_policy
from .transfer import WeightMode, fit_transfer, load_stagewise, load_transfer, save_stagewise, save_transfer

log = logging.getLogger(__name__)

METHODS = ("transfer", "single")

# substreams: each seed splits into independent streams for these purposes
_SOURCE, _TARGET, _TRAIN, _EVAL = range(4)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    target_sizes: tuple = tuple(range(100, 1001, 100))
    source_size: int = 10_000
    seeds: tuple = (0,)
    eval_episodes: int = 100
    gamma: float = 1.0
    weight_mode: str = "identity"
    preset: str = "simulation"
    width: int | None = None
    train: ap.TrainConfig = field(default_factory=lambda: ap.TrainConfig(
        max_epochs=300, batch_size=128, step_size=1e-3, momentum=0.9, max_steps=600))
    target: TwoStageParams = field(default_factory=TwoStageParams)
    source: TwoStageParams = field(default_factory=lambda: TwoStageParams().with_kappa(2, 1.2))
    output_path: str = "results"
    dry_run: bool = False
    save_models: bool = False

    def __post_init__(self):
        if not self.target_sizes or any(n < 1 for n in self.target_sizes):
            raise ConfigError("target sizes must be >= 1")
        if self.source_size < 1 or self.eval_episodes < 1:
            raise ConfigError("source_size and eval_episodes must be >= 1")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be distinct and non-empty")
        if self.weight_mode != "identity":
            raise ConfigError("the ETC harness supports identity weights only")
        if self.preset not in ("simulation", "calibrated"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.target.noise_dims != self.source.noise_dims:
            raise ConfigError("target and source must share the state layout")

    def net(self, input_dim: int) -> ap.NetConfig:
        make = ap.NetConfig.simulation if self.preset == "simulation" else ap.NetConfig.calibrated
        return make(input_dim) if self.width is None else make(input_dim, width=self.width)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_sizes"] = list(self.target_sizes)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rewards: dict = field(default_factory=dict)  # (seed, n0, method) -> episode rewards
    seconds: dict = field(default_factory=dict)  # (seed, n0, method) -> wall-clock fit time
    optimal_value: float = 0.0

    def cumulative_reward(self, key) -> np.ndarray:
        return np.cumsum(self.rewards[key])

    def cumulative_regret(self, key) -> np.ndarray:
        return cumulative_regret(self.rewards[key], self.optimal_value)


def evaluate_policy(env, q: StagewiseQ, episodes: int, gamma: float, rng) -> np.ndarray:
    """Total (gamma-discounted) reward of the greedy policy per episode."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ds = sample_trajectories(env, greedy_policy(q), episodes, rng)
    disc = gamma ** np.arange(ds.horizon)
    return ds.rewards @ disc


def cumulative_regret(episode_rewards, optimal_mean_value: float) -> np.ndarray:
    """Running sum of (optimal value - reward); a lucky episode can make it dip."""
    return np.cumsum(optimal_mean_value - np.asarray(episode_rewards, dtype=float))


def _stream(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, *extra]))


def run_cell(config: ExperimentConfig, seed: int, n0: int, source_data=None, target_pool=None):
    """One (seed, n0) cell: returns ({method: rewards}, {method: seconds}, {method: fitted})."""
    env, senv = make_two_stage(config.target, config.gamma), make_two_stage(config.source, config.gamma)
    if source_data is None:
        source_data = sample_trajectories(senv, uniform_policy(2), config.source_size, _stream(seed, _SOURCE), task=1)
    if target_pool is None:
        target_pool = sample_trajectories(env, uniform_policy(2), n0, _stream(seed, _TARGET))
    target = target_pool.head(n0)
    net = config.net(env.spec.state_dim + 1)
    train_seed = derive_seed(seed, _TRAIN, n0)
    pooled = ApproxSettings("relu-net", net, config.train, train_seed)
    debias = ApproxSettings("relu-net", net.simpler(), config.train, train_seed + 1)
    rewards, seconds, fitted = {}, {}, {}
    t0 = time.perf_counter()
    res = fit_transfer(target, {1: source_data}, env.spec, WeightMode("identity"), pooled, debias)
    seconds["transfer"] = time.perf_counter() - t0
    fitted["transfer"] = res
    t0 = time.perf_counter()
    single = fit_single_task(target, env.spec, pooled)
    seconds["single"] = time.perf_counter() - t0
    fitted["single"] = single
    # both policies see the same evaluation draws (common random numbers)
    for method, q in (("transfer", res.q_final), ("single", single)):
        rewards[method] = evaluate_policy(env, q, config.eval_episodes, config.gamma, _stream(seed, _EVAL, n0))
    return rewards, seconds, fitted


def run_etc_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    env = make_two_stage(config.target, config.gamma)
    result = ExperimentResult(config, optimal_value=env.optimal_mean_value())
    if write:
        _prepare(config.output_path)
    if config.dry_run:
        if write:
            write_manifest(result, dry_run=True)
        return result
    senv = make_two_stage(config.source, config.gamma)
    for seed in config.seeds:
        source = sample_trajectories(senv, uniform_policy(2), config.source_size, _stream(seed, _SOURCE), task=1)
        # target sets are nested prefixes of one exploration run
        pool = sample_trajectories(env, uniform_policy(2), max(config.target_sizes), _stream(seed, _TARGET))
        for n0 in config.target_sizes:
            rewards, seconds, fitted = run_cell(config, seed, n0, source, pool)
            for m in METHODS:
                result.rewards[seed, n0, m] = rewards[m]
                result.seconds[seed, n0, m] = seconds[m]
            log.info("seed %d n0 %d: transfer %.3f single %.3f", seed, n0,
                     rewards["transfer"].mean(), rewards["single"].mean())
            if write and config.save_models:
                _save_models(config, seed, n0, fitted)
    if write:
        write_results(result)
    return result


def _prepare(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path!r}: {exc}") from exc


def _env_dict(params: TwoStageParams) -> dict:
    return {"b1": params.b1, "b2": params.b2, "kappa": list(params.kappa), "noise_dims": params.noise_dims,
            "reward_noise_sd": params.reward_noise_sd}


def _save_models(config, seed, n0, fitted):
    base = os.path.join(config.output_path, "models", f"seed{seed}_n{n0}")
    extra = {"env": _env_dict(config.target), "gamma": config.gamma}
    save_transfer(fitted["transfer"], os.path.join(base, "transfer"), extra)
    save_single(fitted["single"], os.path.join(base, "single"), extra)


def save_single(q: StagewiseQ, directory, extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {"spec": asdict(q.spec), "action_codes": [float(c) for c in q.per_stage[0].action_codes],
                "stages": save_stagewise(q, directory, "q")}
    manifest.update(extra or {})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_model(directory) -> tuple[StagewiseQ, dict]:
    """Load a saved single-task or transfer model; returns (Q, manifest)."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if "pooled" in manifest:
        return load_transfer(directory).q_final, manifest
    spec = MdpSpec(**manifest["spec"])
    return load_stagewise(directory, spec, manifest["stages"], manifest["action_codes"]), manifest


def _num(x: float) -> str:
    return repr(float(x))


def write_manifest(result: ExperimentResult, dry_run: bool = False) -> None:
    manifest = {
        "config": result.config.to_dict(),
        "optimal_value": result.optimal_value,
        "dry_run": dry_run,
        "versions": {"rwtq": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "files": [] if dry_run else ["rewards.csv", "curves.csv", "summary.csv"],
    }
    with open(os.path.join(result.config.output_path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def write_results(result: ExperimentResult) -> None:
    cfg = result.config
    out = cfg.output_path
    with open(os.path.join(out, "rewards.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n0", "method", "episode", "reward"])
        for (seed, n0, m), r in sorted(result.rewards.items()):
            for i, v in enumerate(r, start=1):
                w.writerow([seed, n0, m, i, _num(v)])
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n0", "method", "episode", "cum_reward_mean", "cum_reward_se", "cum_regret_mean", "cum_regret_se"])
        for n0 in cfg.target_sizes:
            for m in METHODS:
                rew = np.array([result.cumulative_reward((s, n0, m)) for s in cfg.seeds])
                reg = np.array([result.cumulative_regret((s, n0, m)) for s in cfg.seeds])
                for i in range(rew.shape[1]):
                    w.writerow([n0, m, i + 1, _num(rew[:, i].mean()), _num(_se(rew[:, i])),
                                _num(reg[:, i].mean()), _num(_se(reg[:, i]))])
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n0", "method", "final_cum_reward_mean", "final_cum_reward_se",
                    "final_cum_regret_mean", "final_cum_regret_se"])
        for n0 in cfg.target_sizes:
            for m in METHODS:
                rew = np.array([result.cumulative_reward((s, n0, m))[-1] for s in cfg.seeds])
                reg = np.array([result.cumulative_regret((s, n0, m))[-1] for s in cfg.seeds])
                w.writerow([n0, m, _num(rew.mean()), _num(_se(rew)), _num(reg.mean()), _num(_se(reg))])
    write_manifest(result)


def _se(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


# ---------------------------------------------------------------------------
# config files


def _ints(text) -> tuple:
    text = str(text).strip()
    if ":" in text:  # start:stop:step, stop inclusive
        a, b, c = (int(v) for v in text.split(":"))
        return tuple(range(a, b + 1, c))
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def load_config(path) -> ExperimentConfig:
    """Read an INI-style experiment config.

    Sections: [experiment] (target_sizes, source_size, seeds, eval_episodes,
    gamma, weight_mode, preset, width, output_path, dry_run, save_models),
    [train] (max_epochs, batch_size, step_size, momentum, max_steps),
    [target] and [source] (b1, b2, kappa, noise_dims, reward_noise_sd).
    """
    cp = configparser.ConfigParser()
    try:
        ok = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not ok:
        raise ConfigError(f"cannot read config {path!r}")
    try:
        ex = cp["experiment"] if "experiment" in cp else {}
        defaults = ExperimentConfig.__dataclass_fields__
        train = ExperimentConfig().train
        if "train" in cp:
            tr = cp["train"]
            bs = tr.get("batch_size", str(train.batch_size))
            ms = tr.get("max_steps", str(train.max_steps))
            train = replace(train, max_epochs=int(tr.get("max_epochs", train.max_epochs)),
                            batch_size=None if bs in ("None", "full", "") else int(bs),
                            step_size=float(tr.get("step_size", train.step_size)),
                            momentum=float(tr.get("momentum", train.momentum)),
                            max_steps=None if ms in ("None", "") else int(ms))
        target = params_from_config(cp["target"])[0] if "target" in cp else TwoStageParams()
        source = params_from_config(cp["source"])[0] if "source" in cp else target.with_kappa(2, 1.2)
        width = ex.get("width")
        cfg = ExperimentConfig(
            target_sizes=_ints(ex.get("target_sizes", "100:1000:100")),
            source_size=int(ex.get("source_size", defaults["source_size"].default)),
            seeds=_ints(ex.get("seeds", "0")),
            eval_episodes=int(ex.get("eval_episodes", defaults["eval_episodes"].default)),
            gamma=float(ex.get("gamma", 1.0)),
            weight_mode=ex.get("weight_mode", "identity"),
            preset=ex.get("preset", "simulation"),
            width=int(width) if width else None,
            train=train, target=target, source=source,
            output_path=ex.get("output_path", "results"),
            dry_run=_bool(ex.get("dry_run", "false")),
            save_models=_bool(ex.get("save_models", "false")),
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
