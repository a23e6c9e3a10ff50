"""Backward-recursive Q estimation and the final value readout.

One network per step is regressed on targets r + sum_a pi(a | s') Q_next,
working from the last step to the first; the value estimate integrates the
step-1 network over initial states and the step-1 action distribution.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .manifold_env import StepDataset
from .mdp import Array, Policy, encode_state_actions, policy_probs_batch
from .neural import NetworkClassParams, ReluNetwork, TrainConfig, fit_least_squares, init_network
from .seeding import draw_root, substream


def q_values_all_actions(net: ReluNetwork, states: Array, action_count: int) -> Array:
    """Clamped Q(s, a) for every action, shape (n, A)."""
    n = len(states)
    out = np.empty((n, action_count), dtype=float)
    for a in range(action_count):
        inputs = encode_state_actions(states, np.full(n, a, dtype=np.int64), action_count)
        out[:, a] = net.forward_batch(inputs)
    return out


@dataclass(frozen=True)
class QStack:
    """Per-step Q networks, index 0 holding step 1; the step H+1 value is 0."""

    networks: list[ReluNetwork]

    def __post_init__(self) -> None:
        if not self.networks:
            raise ValueError("empty Q stack")

    @property
    def horizon(self) -> int:
        return len(self.networks)

    def network(self, h: int) -> ReluNetwork:
        return self.networks[h - 1]


@dataclass(frozen=True)
class FqeResult:
    v_hat: float
    q_stack: QStack
    per_step_train_mse: Array
    config_echo: dict


def regression_targets(
    dataset: StepDataset,
    q_next: ReluNetwork | None,
    target_policy: Policy,
) -> Array:
    """Targets y_k = r_k + sum_a pi_{h+1}(a | s'_k) Q_next(s'_k, a).

    ``q_next`` is the step h+1 network, or None for the zero function at the
    horizon boundary. Results are clamped to [0, H].
    """
    H = target_policy.horizon
    y = dataset.rewards.astype(float).copy()
    if q_next is not None:
        if dataset.h + 1 > H:
            raise ConfigurationError(f"step {dataset.h} is terminal, q_next must be None")
        probs = policy_probs_batch(target_policy, dataset.h + 1, dataset.next_states)
        q = q_values_all_actions(q_next, dataset.next_states, target_policy.action_count)
        y += (probs * q).sum(axis=1)
    return np.clip(y, 0.0, float(H))


def value_readout(q1: ReluNetwork, xi_samples: Array, policy: Policy) -> float:
    """Average of sum_a pi_1(a | s) Q_1(s, a) over initial-state samples."""
    xi_samples = np.asarray(xi_samples, dtype=float)
    if len(xi_samples) == 0:
        raise ValueError("need at least one initial-state sample")
    probs = policy_probs_batch(policy, 1, xi_samples)
    q = q_values_all_actions(q1, xi_samples, policy.action_count)
    return float((probs * q).sum(axis=1).mean())


def fqe_estimate(
    datasets: Sequence[StepDataset],
    target_policy: Policy,
    params: NetworkClassParams,
    cfg: TrainConfig,
    xi_samples: Array,
    rng: np.random.Generator,
) -> FqeResult:
    """Fit Q networks backward from the last step and read out the value.

    ``datasets`` must hold one StepDataset per step h = 1..H in order, and
    ``xi_samples`` are initial states drawn independently of the training
    data. The network output bound must not exceed H so that the estimate
    stays in [0, H].
    """
    H = target_policy.horizon
    if len(datasets) != H:
        raise ConfigurationError(f"expected {H} step datasets, got {len(datasets)}")
    for i, ds in enumerate(datasets):
        if ds.h != i + 1:
            raise ConfigurationError(f"dataset at position {i} has step {ds.h}, expected {i + 1}")
        if ds.size == 0:
            raise ConfigurationError(f"dataset for step {i + 1} is empty")
    if params.output_bound > H + 1e-9:
        raise ConfigurationError(
            f"output bound {params.output_bound} exceeds the horizon {H}"
        )
    obs_dim = datasets[0].states.shape[1]
    if params.input_dim != obs_dim + target_policy.action_count:
        raise ConfigurationError(
            f"input_dim {params.input_dim} != obs_dim {obs_dim} + actions {target_policy.action_count}"
        )
    root = draw_root(rng)
    networks: list[ReluNetwork | None] = [None] * (H + 1)
    train_mse = np.empty(H)
    for h in range(H, 0, -1):
        ds = datasets[h - 1]
        q_next = networks[h] if h < H else None
        y = regression_targets(ds, q_next, target_policy)
        X = encode_state_actions(ds.states, ds.actions, target_policy.action_count)
        net0 = init_network(params, substream(root, h, 0))
        step_cfg = replace(cfg, seed=int(substream(root, h, 1).integers(2**32)))
        net, losses = fit_least_squares(net0, X, y, step_cfg)
        networks[h - 1] = net
        train_mse[h - 1] = losses[-1]
    stack = QStack(networks=networks[:H])  # type: ignore[arg-type]
    v_hat = value_readout(stack.network(1), xi_samples, target_policy)
    echo = {"network": asdict(params), "train": asdict(cfg), "horizon": H}
    return FqeResult(v_hat=v_hat, q_stack=stack, per_step_train_mse=train_mse, config_echo=echo)


def save_fqe_result(result: FqeResult, path: str | Path) -> None:
    """Structured text document with the estimate, per-step MSE, and config."""
    doc = {
        "v_hat": result.v_hat,
        "per_step_train_mse": result.per_step_train_mse.tolist(),
        "config": result.config_echo,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
