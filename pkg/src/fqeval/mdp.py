"""Finite-horizon time-inhomogeneous MDPs, policies, and rollouts.

States are dense vectors in R^D, actions are indices 0..action_count-1, and
steps are indexed h = 1..H. Environments and policies are immutable after
construction; every sampler takes an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .seeding import draw_root, substream

Array = np.ndarray

_SIMPLEX_TOL = 1e-9


class Environment(ABC):
    """Per-step samplers of a finite-horizon MDP.

    Subclasses set the metadata attributes below in ``__init__`` and
    implement the scalar samplers. The ``*_batch`` variants fall back to
    Python loops; override them when a vectorized path exists. Contract:
    rewards lie in [0, 1], observations satisfy ``|s|_inf <= bound_sup``,
    and ``transition`` at step h consumes only (s, a) and fresh randomness.
    """

    horizon: int
    action_count: int
    obs_dim: int
    intrinsic_dim: int
    bound_sup: float
    reach: float

    @abstractmethod
    def initial_sample(self, rng: np.random.Generator) -> Array:
        """Draw s_1 from the initial state distribution."""

    @abstractmethod
    def transition(self, h: int, s: Array, a: int, rng: np.random.Generator) -> Array:
        """Draw the step-(h+1) state following action a in state s at step h."""

    @abstractmethod
    def reward(self, h: int, s: Array, a: int, rng: np.random.Generator) -> float:
        """Draw a reward in [0, 1] for (s, a) at step h."""

    @abstractmethod
    def mean_reward(self, h: int, s: Array, a: int) -> float:
        """Expected reward for (s, a) at step h."""

    def initial_sample_batch(self, n: int, rng: np.random.Generator) -> Array:
        return np.stack([self.initial_sample(rng) for _ in range(n)])

    def transition_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        return np.stack(
            [self.transition(h, s, int(a), rng) for s, a in zip(states, actions)]
        )

    def reward_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        return np.array(
            [self.reward(h, s, int(a), rng) for s, a in zip(states, actions)], dtype=float
        )


@dataclass(frozen=True)
class Policy:
    """Per-step conditional action distribution.

    ``prob_fn(h, s)`` returns the action probabilities at step h in state s,
    for h = 1..horizon. ``batch_prob_fn``, when provided, maps
    ``(h, states (n, D))`` to an ``(n, A)`` matrix of probabilities.
    """

    horizon: int
    action_count: int
    prob_fn: Callable[[int, Array], Array]
    batch_prob_fn: Callable[[int, Array], Array] | None = None
    tag: str = ""


@dataclass(frozen=True)
class Trajectory:
    """One rollout: states s_1..s_H, actions a_1..a_H, rewards r_1..r_H."""

    states: Array  # (H, D)
    actions: Array  # (H,)
    rewards: Array  # (H,)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


def _check_simplex(p: Array, action_count: int) -> None:
    if p.shape != (action_count,):
        raise ValueError(f"probability vector has shape {p.shape}, expected ({action_count},)")
    if np.any(p < 0):
        raise ValueError("negative action probability")
    if abs(float(p.sum()) - 1.0) > _SIMPLEX_TOL:
        raise ValueError(f"action probabilities sum to {p.sum()}, not 1")


def policy_probs(policy: Policy, h: int, s: Array) -> Array:
    """Action distribution of ``policy`` at step h in state s.

    Raises ValueError when h is outside 1..horizon or the policy emits an
    invalid distribution.
    """
    if not 1 <= h <= policy.horizon:
        raise ValueError(f"step index {h} outside 1..{policy.horizon}")
    p = np.asarray(policy.prob_fn(h, np.asarray(s, dtype=float)), dtype=float)
    _check_simplex(p, policy.action_count)
    return p


def policy_probs_batch(policy: Policy, h: int, states: Array) -> Array:
    """Action distributions for a batch of states, shape (n, A)."""
    if not 1 <= h <= policy.horizon:
        raise ValueError(f"step index {h} outside 1..{policy.horizon}")
    states = np.asarray(states, dtype=float)
    if policy.batch_prob_fn is not None:
        p = np.asarray(policy.batch_prob_fn(h, states), dtype=float)
    else:
        p = np.stack([policy.prob_fn(h, s) for s in states]).astype(float)
    if p.shape != (len(states), policy.action_count):
        raise ValueError(f"batch probabilities have shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > _SIMPLEX_TOL):
        raise ValueError("invalid action distribution in batch")
    return p


def sample_action(policy: Policy, h: int, s: Array, rng: np.random.Generator) -> int:
    """Draw an action index from the policy's step-h distribution."""
    p = policy_probs(policy, h, s)
    return int(rng.choice(policy.action_count, p=p))


def sample_actions_batch(policy: Policy, h: int, states: Array, rng: np.random.Generator) -> Array:
    """Vectorized action draws via inverse-CDF, one uniform per state."""
    p = policy_probs_batch(policy, h, states)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(states))
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, policy.action_count - 1)


def _check_compatible(env: Environment, policy: Policy) -> None:
    if env.action_count != policy.action_count:
        raise ConfigurationError(
            f"environment has {env.action_count} actions, policy has {policy.action_count}"
        )
    if env.horizon != policy.horizon:
        raise ConfigurationError(
            f"environment horizon {env.horizon} != policy horizon {policy.horizon}"
        )


def rollout(env: Environment, policy: Policy, rng: np.random.Generator) -> Trajectory:
    """Roll one episode: s_1 ~ xi, a_h ~ policy, s_{h+1} ~ transition."""
    _check_compatible(env, policy)
    states = np.empty((env.horizon, env.obs_dim), dtype=float)
    actions = np.empty(env.horizon, dtype=np.int64)
    rewards = np.empty(env.horizon, dtype=float)
    s = env.initial_sample(rng)
    for h in range(1, env.horizon + 1):
        a = sample_action(policy, h, s, rng)
        r = env.reward(h, s, a, rng)
        states[h - 1] = s
        actions[h - 1] = a
        rewards[h - 1] = r
        s = env.transition(h, s, a, rng)
    return Trajectory(states=states, actions=actions, rewards=rewards)


def rollout_returns(
    env: Environment,
    policy: Policy,
    n: int,
    rng: np.random.Generator,
    chunk: int = 16384,
) -> Array:
    """Returns of n independent episodes, rolled in vectorized chunks.

    Each chunk runs on its own substream, so results are deterministic for
    a given generator state and independent of the chunk size schedule used
    by a parallel driver.
    """
    _check_compatible(env, policy)
    root = draw_root(rng)
    out = np.empty(n, dtype=float)
    start = 0
    ci = 0
    while start < n:
        m = min(chunk, n - start)
        sub = substream(root, ci)
        s = env.initial_sample_batch(m, sub)
        total = np.zeros(m, dtype=float)
        for h in range(1, env.horizon + 1):
            a = sample_actions_batch(policy, h, s, sub)
            total += env.reward_batch(h, s, a, sub)
            s = env.transition_batch(h, s, a, sub)
        out[start : start + m] = total
        start += m
        ci += 1
    return out


def encode_state_actions(states: Array, actions: Array, action_count: int) -> Array:
    """Feature encoding of (s, a) pairs: state with a one-hot action appended."""
    states = np.asarray(states, dtype=float)
    onehot = np.eye(action_count, dtype=float)[np.asarray(actions, dtype=np.int64)]
    return np.concatenate([states, onehot], axis=1)


def uniform_policy(horizon: int, action_count: int) -> Policy:
    """Uniform distribution over actions at every step and state."""
    p = np.full(action_count, 1.0 / action_count)

    def prob_fn(h: int, s: Array) -> Array:
        return p

    def batch_prob_fn(h: int, states: Array) -> Array:
        return np.tile(p, (len(states), 1))

    return Policy(horizon, action_count, prob_fn, batch_prob_fn, tag="uniform")


def point_mass_policy(horizon: int, action_count: int, action: int) -> Policy:
    """Deterministic policy that always picks ``action``."""
    if not 0 <= action < action_count:
        raise ValueError(f"action {action} outside 0..{action_count - 1}")
    p = np.zeros(action_count)
    p[action] = 1.0

    def prob_fn(h: int, s: Array) -> Array:
        return p

    def batch_prob_fn(h: int, states: Array) -> Array:
        return np.tile(p, (len(states), 1))

    return Policy(horizon, action_count, prob_fn, batch_prob_fn, tag=f"point-mass({action})")


def mixture_policy(primary: Policy, secondary: Policy, weight: float) -> Policy:
    """Mixture ``weight * primary + (1 - weight) * secondary``."""
    if primary.horizon != secondary.horizon or primary.action_count != secondary.action_count:
        raise ConfigurationError("mixture components must share horizon and action count")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"mixture weight {weight} outside [0, 1]")
    w = float(weight)

    def prob_fn(h: int, s: Array) -> Array:
        return w * primary.prob_fn(h, s) + (1.0 - w) * secondary.prob_fn(h, s)

    def batch_prob_fn(h: int, states: Array) -> Array:
        pa = policy_probs_batch(primary, h, states)
        pb = policy_probs_batch(secondary, h, states)
        return w * pa + (1.0 - w) * pb

    tag = f"{w:g}*{primary.tag} + {1 - w:g}*{secondary.tag}"
    return Policy(primary.horizon, primary.action_count, prob_fn, batch_prob_fn, tag=tag)
