"""Re-weighted targeting transfer Q-learning for finite-horizon offline RL."""

__version__ = "0.1.0"

from .approx import ConstantApprox, DataError, LinearApprox, NetConfig, ReluNet, TabularApprox, TrainConfig
from .backward import ApproxSettings, fit_single_task, pseudo_response
from .density import (BoxDomain, DensityModel, FiniteDomain, RatioFunction, estimate_conditional_density,
                      exact_ratio_finite, normalize_density, ratio_no_transfer, ratio_with_transfer)
from .envs import (FiniteMdp, ThetaCoefficients, TwoStageEnv, TwoStageParams, analytic_q, expit, make_two_stage,
                   sample_trajectories)
from .harness import ExperimentConfig, ExperimentResult, cumulative_regret, evaluate_policy, run_etc_experiment
from .mdp import Dataset, MdpSpec, StagewiseQ, Trajectory, TransitionTuple, greedy_action, greedy_policy, uniform_policy
from .transfer import DensitySettings, TransferResult, WeightMode, aggregate_q_reference, fit_transfer

__all__ = [name for name in dir() if not name.startswith("_")]
