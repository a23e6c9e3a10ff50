"""Experiment configuration, sweep execution, and CSV result emission.

A sweep runs the full estimation pipeline over a grid of
(seed, sample size, ambient dimension, behavior mixture weight) cells,
compares each estimate against a shared Monte Carlo reference, and writes
one CSV row per cell in deterministic grid order.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .fqe import fqe_estimate
from .manifold_env import StepDataset, generate_step_dataset, make_target_policy, make_torus_env
from .mdp import Policy, mixture_policy, uniform_policy
from .neural import NetworkClassParams, TrainConfig, schedule_class_params
from .oracles import (
    TabularEnvWrapper,
    load_bundled_mdp,
    load_tabular_mdp,
    table_policy,
    tabular_dp,
)
from .seeding import substream
from .shift import estimate_shift_report

MODES = ("single", "sweep_k", "sweep_dim", "sweep_shift", "oracle")

SCHEMA_VERSION = "fqeval-results-v1"

CSV_COLUMNS = [
    "mode",
    "seed",
    "K",
    "D",
    "d",
    "epsilon",
    "v_hat",
    "v_true_mean",
    "v_true_se",
    "abs_error",
    "shift_estimate",
    "wall_time_seconds",
]

# Substream tags for the per-cell randomness.
_DATA, _FQE, _XI, _SHIFT, _MC, _POLICY = range(6)


@dataclass(frozen=True)
class EnvSpec:
    intrinsic_dim: int = 1
    ambient_dims: tuple[int, ...] = (10,)
    horizon: int = 10
    action_count: int = 2
    dynamics_seed: int = 0
    noise_scale: float = 0.2
    drift_scale: float = 1.0
    reward_scale: float = 0.95
    reward_harmonics: int = 6
    reward_noise: str = "bernoulli"


@dataclass(frozen=True)
class PolicySpec:
    target_seed: int = 0
    sharpness: float = 3.0
    epsilons: tuple[float, ...] = (1.0,)  # behavior = eps * target + (1 - eps) * uniform


@dataclass(frozen=True)
class NetworkConstants:
    """Multipliers for the sample-size driven network schedule."""

    c_depth: float = 0.25
    c_width: float = 4.0
    c_budget: float = 60.0
    smoothness: float = 2.0


@dataclass(frozen=True)
class ShiftSpec:
    restarts: int = 4
    ascent_steps: int = 150
    learning_rate: float = 0.05
    n_target_rollouts: int = 2000
    max_points: int = 4000


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "single"
    base_seed: int = 0
    env: EnvSpec = field(default_factory=EnvSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    sample_sizes: tuple[int, ...] = (5000,)
    seeds: tuple[int, ...] = (0,)
    network: NetworkConstants = field(default_factory=NetworkConstants)
    train: TrainConfig = field(default_factory=TrainConfig)
    mc_rollouts: int = 100_000
    readout_samples: int = 100_000
    oracle_mdps: tuple[str, ...] = ()
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if not self.sample_sizes or any(k < 1 for k in self.sample_sizes):
            raise ConfigurationError("sample sizes must be positive")
        if any(not 0.0 <= e <= 1.0 for e in self.policy.epsilons):
            raise ConfigurationError("mixture weights must lie in [0, 1]")
        if self.mode == "oracle" and not self.oracle_mdps:
            raise ConfigurationError("oracle mode needs at least one tabular MDP name or path")
        if self.mc_rollouts < 2 or self.readout_samples < 1:
            raise ConfigurationError("mc_rollouts must be >= 2 and readout_samples >= 1")


@dataclass(frozen=True)
class ResultRow:
    mode: str
    seed: int
    K: int
    D: int
    d: int
    epsilon: float
    v_hat: float
    v_true_mean: float
    v_true_se: float
    abs_error: float
    shift_estimate: float | None
    wall_time_seconds: float


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(median error) against log(sample size)."""

    slope: float
    stderr: float
    n_points: int


def _build_section(cls, doc: dict, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {name!r} section: {sorted(unknown)}")
    converted = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config document must be a JSON object")
    doc = dict(doc)
    sections = {
        "env": EnvSpec,
        "policy": PolicySpec,
        "network": NetworkConstants,
        "train": TrainConfig,
        "shift": ShiftSpec,
    }
    kwargs = {}
    for key, cls in sections.items():
        if key in doc:
            kwargs[key] = _build_section(cls, doc.pop(key), key)
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    for k, v in doc.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid config: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def _resolve_mdp(name: str):
    if name.endswith(".json"):
        return load_tabular_mdp(name)
    return load_bundled_mdp(name)


def _oracle_target_policy(mdp, policy_seed: int, mdp_index: int) -> Policy:
    """A fixed stochastic table policy over the MDP's states."""
    rng = substream(policy_seed, _POLICY, mdp_index)
    raw = rng.dirichlet(np.full(mdp.n_actions, 2.0), size=(mdp.horizon, mdp.n_states))
    return table_policy(raw)


def _oracle_class_params(mdp, horizon: int) -> NetworkClassParams:
    """A class wide enough to represent any table on one-hot features."""
    width = mdp.n_states * mdp.n_actions + 4
    input_dim = mdp.n_states + mdp.n_actions
    return NetworkClassParams(
        depth=2,
        width=width,
        param_budget=20 * width * input_dim,
        weight_bound=max(2.0, float(horizon)),
        output_bound=float(horizon),
        input_dim=input_dim,
    )


def _run_torus_cell(
    config: ExperimentConfig,
    env,
    target: Policy,
    v_true,
    seed: int,
    K: int,
    D: int,
    eps_index: int,
) -> ResultRow:
    t0 = time.perf_counter()
    eps = config.policy.epsilons[eps_index]
    behavior = (
        target
        if eps == 1.0
        else mixture_policy(target, uniform_policy(env.horizon, env.action_count), eps)
    )
    base = config.base_seed
    key = (seed, K, D, eps_index)
    data_rng = substream(base, _DATA, *key)
    datasets = [
        generate_step_dataset(env, behavior, h, K, data_rng) for h in range(1, env.horizon + 1)
    ]
    params = schedule_class_params(
        sample_count=K,
        smoothness=config.network.smoothness,
        intrinsic_dim=env.intrinsic_dim,
        bound_sup=env.bound_sup,
        horizon=env.horizon,
        reach=env.reach,
        input_dim=env.obs_dim + env.action_count,
        c_depth=config.network.c_depth,
        c_width=config.network.c_width,
        c_budget=config.network.c_budget,
    )
    xi = env.initial_sample_batch(config.readout_samples, substream(base, _XI, *key))
    result = fqe_estimate(datasets, target, params, config.train, xi, substream(base, _FQE, *key))
    shift_value = None
    if config.mode == "sweep_shift":
        spec = config.shift
        trimmed = [
            StepDataset(
                ds.h,
                ds.states[: spec.max_points],
                ds.actions[: spec.max_points],
                ds.next_states[: spec.max_points],
                ds.rewards[: spec.max_points],
            )
            for ds in datasets
        ]
        opt_cfg = TrainConfig(
            epochs=spec.ascent_steps,
            batch_size=1,
            learning_rate=spec.learning_rate,
            optimizer="gd",
            seed=int(substream(base, _SHIFT, *key).integers(2**32)),
        )
        report = estimate_shift_report(
            env,
            target,
            trimmed,
            params,
            opt_cfg,
            substream(base, _SHIFT, *key, 1),
            n_target_rollouts=spec.n_target_rollouts,
            restarts=spec.restarts,
        )
        shift_value = report.aggregate
    return ResultRow(
        mode=config.mode,
        seed=seed,
        K=K,
        D=D,
        d=env.intrinsic_dim,
        epsilon=eps,
        v_hat=result.v_hat,
        v_true_mean=v_true.mean,
        v_true_se=v_true.std_error,
        abs_error=abs(result.v_hat - v_true.mean),
        shift_estimate=shift_value,
        wall_time_seconds=time.perf_counter() - t0,
    )


def _run_oracle_cell(
    config: ExperimentConfig, mdp, mdp_index: int, seed: int, K: int, eps_index: int
) -> ResultRow:
    t0 = time.perf_counter()
    eps = config.policy.epsilons[eps_index]
    env = TabularEnvWrapper(mdp)
    target = _oracle_target_policy(mdp, config.policy.target_seed, mdp_index)
    behavior = (
        target
        if eps == 1.0
        else mixture_policy(target, uniform_policy(env.horizon, env.action_count), eps)
    )
    _, v_true = tabular_dp(mdp, target)
    base = config.base_seed
    key = (seed, K, mdp_index, eps_index)
    data_rng = substream(base, _DATA, *key)
    datasets = [
        generate_step_dataset(env, behavior, h, K, data_rng) for h in range(1, env.horizon + 1)
    ]
    params = _oracle_class_params(mdp, env.horizon)
    xi = env.initial_sample_batch(config.readout_samples, substream(base, _XI, *key))
    result = fqe_estimate(datasets, target, params, config.train, xi, substream(base, _FQE, *key))
    return ResultRow(
        mode=config.mode,
        seed=seed,
        K=K,
        D=env.obs_dim,
        d=env.intrinsic_dim,
        epsilon=eps,
        v_hat=result.v_hat,
        v_true_mean=v_true,
        v_true_se=0.0,
        abs_error=abs(result.v_hat - v_true),
        shift_estimate=None,
        wall_time_seconds=time.perf_counter() - t0,
    )


def run_experiment(
    config: ExperimentConfig, out_path: str | Path | None = None, workers: int = 1
) -> list[ResultRow]:
    """Run every grid cell and return rows in deterministic grid order.

    The grid is seeds x sample_sizes x ambient_dims x epsilons (replacing
    ambient_dims with the tabular MDP list in oracle mode). The reference
    value per environment is computed once and shared across cells. Rows are
    buffered and written in grid order regardless of worker scheduling.
    """
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")
    tasks = []
    if config.mode == "oracle":
        mdps = [_resolve_mdp(name) for name in config.oracle_mdps]
        for seed in config.seeds:
            for K in config.sample_sizes:
                for mi in range(len(mdps)):
                    for ei in range(len(config.policy.epsilons)):
                        tasks.append(
                            lambda seed=seed, K=K, mi=mi, ei=ei: _run_oracle_cell(
                                config, mdps[mi], mi, seed, K, ei
                            )
                        )
    else:
        spec = config.env
        envs = {
            D: make_torus_env(
                spec.intrinsic_dim,
                D,
                spec.horizon,
                spec.action_count,
                spec.dynamics_seed,
                noise_scale=spec.noise_scale,
                drift_scale=spec.drift_scale,
                reward_scale=spec.reward_scale,
                reward_harmonics=spec.reward_harmonics,
                reward_noise=spec.reward_noise,
            )
            for D in spec.ambient_dims
        }
        targets = {
            D: make_target_policy(envs[D], config.policy.target_seed, config.policy.sharpness)
            for D in spec.ambient_dims
        }
        from .oracles import monte_carlo_value

        v_true = {
            D: monte_carlo_value(
                envs[D], targets[D], config.mc_rollouts, substream(config.base_seed, _MC, D)
            )
            for D in spec.ambient_dims
        }
        for seed in config.seeds:
            for K in config.sample_sizes:
                for D in spec.ambient_dims:
                    for ei in range(len(config.policy.epsilons)):
                        tasks.append(
                            lambda seed=seed, K=K, D=D, ei=ei: _run_torus_cell(
                                config, envs[D], targets[D], v_true[D], seed, K, D, ei
                            )
                        )
    if workers == 1:
        rows = [task() for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda t: t(), tasks))
    if out_path is not None:
        write_result_csv(rows, out_path)
    return rows


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_result_csv(rows: Sequence[ResultRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {SCHEMA_VERSION}\n")
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(getattr(row, c)) for c in CSV_COLUMNS])


def read_result_csv(path: str | Path) -> list[ResultRow]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != f"# {SCHEMA_VERSION}":
            raise ValueError(f"unexpected schema header {header!r}")
        reader = csv.DictReader(f)
        rows = []
        for rec in reader:
            rows.append(
                ResultRow(
                    mode=rec["mode"],
                    seed=int(rec["seed"]),
                    K=int(rec["K"]),
                    D=int(rec["D"]),
                    d=int(rec["d"]),
                    epsilon=float(rec["epsilon"]),
                    v_hat=float(rec["v_hat"]),
                    v_true_mean=float(rec["v_true_mean"]),
                    v_true_se=float(rec["v_true_se"]),
                    abs_error=float(rec["abs_error"]),
                    shift_estimate=float(rec["shift_estimate"]) if rec["shift_estimate"] else None,
                    wall_time_seconds=float(rec["wall_time_seconds"]),
                )
            )
    return rows


def fit_rate(rows: Sequence[ResultRow]) -> RateFit:
    """OLS slope of log median error against log sample size.

    Needs at least 3 distinct sample sizes with at least 3 rows each.
    """
    by_k: dict[int, list[float]] = {}
    for row in rows:
        by_k.setdefault(row.K, []).append(row.abs_error)
    if len(by_k) < 3:
        raise ValueError(f"need >= 3 distinct sample sizes, got {len(by_k)}")
    for K, errs in by_k.items():
        if len(errs) < 3:
            raise ValueError(f"need >= 3 repetitions per sample size, got {len(errs)} at K={K}")
    ks = np.array(sorted(by_k), dtype=float)
    med = np.array([np.median(by_k[int(k)]) for k in ks])
    if np.any(med <= 0):
        raise ValueError("median error is zero; cannot fit a log-log slope")
    x = np.log(ks)
    y = np.log(med)
    n = len(x)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    resid = y - (y.mean() + slope * xc)
    dof = n - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return RateFit(slope=slope, stderr=float(np.sqrt(sigma2 / sxx)), n_points=n)


def desk_scale_config(mode: str) -> ExperimentConfig:
    """Default desk-scale grids mirroring the main sweep layouts."""
    sweep_train = TrainConfig(epochs=40, batch_size=256, learning_rate=0.02, lr_decay=0.85)
    if mode in ("single", "sweep_k"):
        return ExperimentConfig(
            mode=mode,
            sample_sizes=(5000,) if mode == "single" else (5000, 10000, 20000),
            seeds=(0,) if mode == "single" else (0, 1, 2, 3, 4),
            env=EnvSpec(intrinsic_dim=1, ambient_dims=(10,), horizon=10),
            train=sweep_train,
        )
    if mode == "sweep_dim":
        return ExperimentConfig(
            mode=mode,
            sample_sizes=(10000,),
            seeds=(0, 1, 2, 3, 4),
            env=EnvSpec(intrinsic_dim=2, ambient_dims=(10, 200), horizon=10),
            train=sweep_train,
        )
    if mode == "sweep_shift":
        return ExperimentConfig(
            mode=mode,
            sample_sizes=(5000,),
            seeds=(0, 1, 2),
            env=EnvSpec(intrinsic_dim=1, ambient_dims=(10,), horizon=10),
            policy=PolicySpec(epsilons=(1.0, 0.8)),
            train=sweep_train,
        )
    if mode == "oracle":
        return ExperimentConfig(
            mode=mode,
            sample_sizes=(4000,),
            seeds=(0,),
            oracle_mdps=("chain_deterministic", "two_room", "drifting_ring"),
            train=TrainConfig(epochs=400, batch_size=1_000_000, learning_rate=0.3, optimizer="momentum"),
        )
    raise ConfigurationError(f"unknown mode {mode!r}")
