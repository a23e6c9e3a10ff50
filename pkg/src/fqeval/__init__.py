"""Fitted Q-evaluation on manifold-structured MDPs, with shift diagnostics."""

from .errors import ConfigurationError, KinkError
from .fqe import FqeResult, QStack, fqe_estimate, regression_targets, value_readout
from .harness import ExperimentConfig, ResultRow, fit_rate, run_experiment
from .manifold_env import (
    StepDataset,
    TorusEmbedding,
    TorusEnv,
    generate_step_dataset,
    make_target_policy,
    make_torus_env,
)
from .mdp import (
    Environment,
    Policy,
    Trajectory,
    mixture_policy,
    point_mass_policy,
    policy_probs,
    rollout,
    sample_action,
    uniform_policy,
)
from .neural import (
    NetworkClassParams,
    ReluNetwork,
    TrainConfig,
    fit_least_squares,
    forward,
    grad_check,
    init_network,
    project_constraints,
    schedule_class_params,
)
from .oracles import TabularMdp, ValueEstimate, monte_carlo_value, tabular_dp
from .shift import (
    SampleSet,
    ShiftReport,
    aggregate_shift,
    gaussian_chi2,
    mean_shift_bound_holds,
    ratio_objective,
    restricted_chi2,
)

__all__ = [
    "ConfigurationError",
    "KinkError",
    "FqeResult",
    "QStack",
    "fqe_estimate",
    "regression_targets",
    "value_readout",
    "ExperimentConfig",
    "ResultRow",
    "fit_rate",
    "run_experiment",
    "StepDataset",
    "TorusEmbedding",
    "TorusEnv",
    "generate_step_dataset",
    "make_target_policy",
    "make_torus_env",
    "Environment",
    "Policy",
    "Trajectory",
    "mixture_policy",
    "point_mass_policy",
    "policy_probs",
    "rollout",
    "sample_action",
    "uniform_policy",
    "NetworkClassParams",
    "ReluNetwork",
    "TrainConfig",
    "fit_least_squares",
    "forward",
    "grad_check",
    "init_network",
    "project_constraints",
    "schedule_class_params",
    "TabularMdp",
    "ValueEstimate",
    "monte_carlo_value",
    "tabular_dp",
    "SampleSet",
    "ShiftReport",
    "aggregate_shift",
    "gaussian_chi2",
    "mean_shift_bound_holds",
    "ratio_objective",
    "restricted_chi2",
]
