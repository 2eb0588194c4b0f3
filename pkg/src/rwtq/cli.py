"""Command-line entry point: ``rwtq run|theta|density-bench|eval``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .approx import DataError
from .envs import TwoStageParams, analytic_q, make_two_stage
from .mdp import StructureError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _kappa(values) -> tuple:
    flat = [v for item in values for v in str(item).split(",") if v]
    if len(flat) != 7:
        raise argparse.ArgumentTypeError("kappa needs exactly 7 values")
    return tuple(float(v) for v in flat)


def cmd_theta(args) -> int:
    kappa = _kappa(args.kappa) if args.kappa else (1.0,) * 7
    theta = analytic_q(TwoStageParams(b1=args.b1, b2=args.b2, kappa=kappa))
    print("theta1 " + " ".join(f"{v:.4f}" for v in theta.theta1))
    print("theta2 " + " ".join(f"{v:.4f}" for v in theta.theta2))
    return EXIT_OK


def cmd_run(args) -> int:
    from .harness import load_config, run_etc_experiment
    cfg = load_config(args.config)
    if args.dry_run:
        from dataclasses import replace
        cfg = replace(cfg, dry_run=True)
    result = run_etc_experiment(cfg)
    print(f"optimal value {result.optimal_value:.4f}")
    for n0 in cfg.target_sizes:
        if cfg.dry_run:
            break
        means = {m: np.mean([result.cumulative_reward((s, n0, m))[-1] for s in cfg.seeds])
                 for m in ("transfer", "single")}
        print(f"n0={n0} transfer {means['transfer']:.3f} single {means['single']:.3f}")
    print(f"results written to {cfg.output_path}")
    return EXIT_OK


def cmd_density_bench(args) -> int:
    from .bench import load_bench_config, run_density_bench
    cfg = load_bench_config(args.config)
    rows = run_density_bench(cfg)
    for n0 in cfg.target_sizes:
        for method in ("no_transfer", "transfer"):
            vals = [r["rmse"] for r in rows if r["n0"] == n0 and r["method"] == method]
            print(f"n0={n0} {method} mean rmse {np.mean(vals):.4f}")
    print(f"results written to {cfg.output_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import cumulative_regret, evaluate_policy, load_model
    q, manifest = load_model(args.model_dir)
    env_info = manifest.get("env")
    if env_info is None:
        raise DataError(f"{args.model_dir}: manifest has no environment block")
    params = TwoStageParams(b1=env_info["b1"], b2=env_info["b2"], kappa=tuple(env_info["kappa"]),
                            noise_dims=env_info["noise_dims"], reward_noise_sd=env_info["reward_noise_sd"])
    gamma = manifest.get("gamma", 1.0)
    env = make_two_stage(params, gamma)
    if env.spec.state_dim != q.spec.state_dim:
        raise DataError(f"{args.model_dir}: model state dimension does not match its environment")
    rewards = evaluate_policy(env, q, args.episodes, gamma, np.random.default_rng(args.seed))
    regret = cumulative_regret(rewards, env.optimal_mean_value())
    print(f"episodes {args.episodes} mean reward {rewards.mean():.4f} final regret {regret[-1]:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwtq", description="Re-weighted transfer Q-learning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an explore-then-commit experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--dry-run", action="store_true", help="write the manifest without training")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("theta", help="print analytic Q* coefficients of the two-stage MDP")
    t.add_argument("--b1", type=float, default=1.0)
    t.add_argument("--b2", type=float, default=1.0)
    t.add_argument("--kappa", nargs="+", help="7 values, space or comma separated")
    t.set_defaults(func=cmd_theta)

    d = sub.add_parser("density-bench", help="ratio estimator RMSE sweep")
    d.add_argument("--config", required=True)
    d.set_defaults(func=cmd_density_bench)

    e = sub.add_parser("eval", help="re-evaluate a saved Q estimate")
    e.add_argument("--model-dir", required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    from .harness import ConfigError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "theta" and args.kappa:
            _kappa(args.kappa)
        if args.command == "eval" and args.episodes < 1:
            raise ConfigError("--episodes must be >= 1")
        return args.func(args)
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, StructureError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
