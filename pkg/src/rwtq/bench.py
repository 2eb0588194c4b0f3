"""Ratio-estimator RMSE sweep on the one-step expit testbed.

Each cell draws target and source tuples, fits tabular conditional
densities, and scores the plain and transfer ratio estimators against the
exact floored ratio table.
"""
from __future__ import annotations

import configparser
import csv
import os
from dataclasses import dataclass

import numpy as np

from .density import (FiniteDomain, estimate_conditional_density, exact_ratio_finite, ratio_no_transfer,
                      ratio_rmse, ratio_with_transfer)
from .envs import expit_testbed, sample_trajectories
from .harness import ConfigError, _ints
from .mdp import uniform_policy

DOMAIN = FiniteDomain([[-1.0], [1.0]])


@dataclass(frozen=True)
class BenchConfig:
    target_b1: float = 1.0
    target_b2: float = 1.0
    source_b1: float = 0.9
    source_b2: float = 1.0
    target_sizes: tuple = (1000, 5000, 25000)
    source_size: int = 20000
    seeds: tuple = tuple(range(10))
    floor: float = 0.05
    ratio_kind: str = "constant"
    output_path: str = "density-bench"

    def __post_init__(self):
        if not self.target_sizes or min(self.target_sizes) < 1 or self.source_size < 1:
            raise ConfigError("sample sizes must be >= 1")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct and non-empty")
        if self.floor <= 0:
            raise ConfigError("floor must be positive")
        if self.ratio_kind not in ("constant", "linear", "tabular", "relu-net"):
            raise ConfigError(f"unknown ratio kind {self.ratio_kind!r}")


def _stage(b1, b2, n, rng):
    return sample_trajectories(expit_testbed(b1, b2), uniform_policy(2), n, rng).stage(1)


def bench_cell(config: BenchConfig, n0: int, seed: int) -> dict:
    """RMSE of both ratio estimators for one (n0, seed)."""
    ss = np.random.SeedSequence([seed, n0])
    rt, rs, rf = (np.random.default_rng(s) for s in ss.spawn(3))
    tgt, src = expit_testbed(config.target_b1, config.target_b2), expit_testbed(config.source_b1, config.source_b2)
    exact = exact_ratio_finite(tgt.P[0], src.P[0], config.floor).table
    s0 = _stage(config.target_b1, config.target_b2, n0, rt)
    sk = _stage(config.source_b1, config.source_b2, config.source_size, rs)
    m0 = estimate_conditional_density(s0.states, s0.actions, s0.next_states, DOMAIN, kind="tabular")
    mk = estimate_conditional_density(sk.states, sk.actions, sk.next_states, DOMAIN, kind="tabular")
    plain = ratio_no_transfer(m0, mk, config.floor)
    learned = ratio_with_transfer(mk, s0.states, s0.actions, s0.next_states, kind=config.ratio_kind,
                                  seed=int(rf.integers(2**31)), floor=config.floor)
    return {"no_transfer": ratio_rmse(plain, exact, DOMAIN), "transfer": ratio_rmse(learned, exact, DOMAIN)}


def run_density_bench(config: BenchConfig, write: bool = True) -> list[dict]:
    rows = []
    for n0 in config.target_sizes:
        for seed in config.seeds:
            for method, rmse in bench_cell(config, n0, seed).items():
                rows.append({"n0": n0, "source_size": config.source_size, "seed": seed, "method": method,
                             "rmse": rmse})
    if write:
        try:
            os.makedirs(config.output_path, exist_ok=True)
            path = os.path.join(config.output_path, "ratio_rmse.csv")
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                for r in rows:
                    w.writerow({**r, "rmse": repr(r["rmse"])})
        except OSError as exc:
            raise OSError(f"cannot write bench results under {config.output_path!r}: {exc}") from exc
    return rows


def load_bench_config(path) -> BenchConfig:
    """Read the [density] section of an INI file."""
    cp = configparser.ConfigParser()
    try:
        ok = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not ok:
        raise ConfigError(f"cannot read config {path!r}")
    sec = cp["density"] if "density" in cp else {}
    d = BenchConfig()
    try:
        return BenchConfig(
            target_b1=float(sec.get("target_b1", d.target_b1)), target_b2=float(sec.get("target_b2", d.target_b2)),
            source_b1=float(sec.get("source_b1", d.source_b1)), source_b2=float(sec.get("source_b2", d.source_b2)),
            target_sizes=_ints(sec.get("target_sizes", ",".join(map(str, d.target_sizes)))),
            source_size=int(sec.get("source_size", d.source_size)),
            seeds=_ints(sec.get("seeds", "0:9:1")),
            floor=float(sec.get("floor", d.floor)),
            ratio_kind=sec.get("ratio_kind", d.ratio_kind),
            output_path=sec.get("output_path", d.output_path),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
