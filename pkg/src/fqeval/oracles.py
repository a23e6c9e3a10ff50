"""Ground-truth references: Monte Carlo policy value and exact tabular DP."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import Array, Environment, Policy, policy_probs, rollout_returns

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP given by explicit arrays.

    transitions: (H, S, A, S) row-stochastic kernels.
    rewards:     (H, S, A) mean rewards in [0, 1].
    initial_dist: (S,) distribution of the first state.
    """

    transitions: Array
    rewards: Array
    initial_dist: Array

    def __post_init__(self) -> None:
        P = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        xi = np.asarray(self.initial_dist, dtype=float)
        if P.ndim != 4 or P.shape[3] != P.shape[1]:
            raise ValueError(f"transitions have shape {P.shape}, expected (H, S, A, S)")
        H, S, A = P.shape[:3]
        if r.shape != (H, S, A):
            raise ValueError(f"rewards have shape {r.shape}, expected {(H, S, A)}")
        if xi.shape != (S,):
            raise ValueError(f"initial_dist has shape {xi.shape}, expected ({S},)")
        if np.any(np.abs(P.sum(axis=3) - 1.0) > _ROW_SUM_TOL):
            raise ValueError("transition rows must sum to 1")
        if np.any(P < 0):
            raise ValueError("negative transition probability")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if abs(float(xi.sum()) - 1.0) > _ROW_SUM_TOL or np.any(xi < 0):
            raise ValueError("initial_dist must be a distribution")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "initial_dist", xi)

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[2]


@dataclass(frozen=True)
class ValueEstimate:
    """Monte Carlo estimate of a policy value."""

    mean: float
    std_error: float
    n_rollouts: int


def one_hot(index: int, size: int) -> Array:
    v = np.zeros(size, dtype=float)
    v[index] = 1.0
    return v


def _policy_table(mdp: TabularMdp, policy: Policy) -> Array:
    """Evaluate a policy on one-hot states, giving a (H, S, A) table."""
    table = np.empty((mdp.horizon, mdp.n_states, mdp.n_actions), dtype=float)
    for h in range(1, mdp.horizon + 1):
        for s in range(mdp.n_states):
            table[h - 1, s] = policy_probs(policy, h, one_hot(s, mdp.n_states))
    return table


def tabular_dp(mdp: TabularMdp, policy: Policy) -> tuple[Array, float]:
    """Exact backward induction.

    Returns the (H, S, A) array of Q tables and the policy value, with
    Q_H = r_H and Q_h = r_h + P_h (sum_a' pi_{h+1} Q_{h+1}) for h < H.
    """
    if policy.horizon != mdp.horizon or policy.action_count != mdp.n_actions:
        raise ValueError("policy shape does not match the MDP")
    pi = _policy_table(mdp, policy)
    H = mdp.horizon
    Q = np.zeros((H, mdp.n_states, mdp.n_actions), dtype=float)
    Q[H - 1] = mdp.rewards[H - 1]
    for h in range(H - 1, 0, -1):
        next_value = (pi[h] * Q[h]).sum(axis=1)  # (S,)
        Q[h - 1] = mdp.rewards[h - 1] + mdp.transitions[h - 1] @ next_value
    v = float(mdp.initial_dist @ (pi[0] * Q[0]).sum(axis=1))
    return Q, v


def bellman_residual(mdp: TabularMdp, policy: Policy, Q: Array) -> float:
    """Max absolute residual of the backward recursion at every (h, s, a)."""
    pi = _policy_table(mdp, policy)
    H = mdp.horizon
    worst = float(np.max(np.abs(Q[H - 1] - mdp.rewards[H - 1])))
    for h in range(H - 1, 0, -1):
        next_value = (pi[h] * Q[h]).sum(axis=1)
        backup = mdp.rewards[h - 1] + mdp.transitions[h - 1] @ next_value
        worst = max(worst, float(np.max(np.abs(Q[h - 1] - backup))))
    return worst


def monte_carlo_value(
    env: Environment, policy: Policy, n: int, rng: np.random.Generator
) -> ValueEstimate:
    """Mean and standard error of n independent rollout returns."""
    if n < 2:
        raise ValueError(f"need at least 2 rollouts, got {n}")
    returns = rollout_returns(env, policy, n, rng)
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(n))
    return ValueEstimate(mean=mean, std_error=se, n_rollouts=n)


class TabularEnvWrapper(Environment):
    """A TabularMdp exposed through the Environment interface.

    Observations are one-hot state indicators (so obs_dim = n_states), and
    rewards are emitted deterministically at their means. The sup-norm
    bound and reach are 1 by construction of the one-hot embedding.
    """

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        self.horizon = mdp.horizon
        self.action_count = mdp.n_actions
        self.obs_dim = mdp.n_states
        self.intrinsic_dim = mdp.n_states
        self.bound_sup = 1.0
        self.reach = 1.0
        self._eye = np.eye(mdp.n_states, dtype=float)
        self._cum_init = np.cumsum(mdp.initial_dist)
        self._cum_trans = np.cumsum(mdp.transitions, axis=3)

    def _state_index(self, s: Array) -> int:
        return int(np.argmax(s))

    def initial_sample(self, rng: np.random.Generator) -> Array:
        return self.initial_sample_batch(1, rng)[0]

    def initial_sample_batch(self, n: int, rng: np.random.Generator) -> Array:
        u = rng.random(n)
        idx = np.minimum((u[:, None] >= self._cum_init).sum(axis=1), self.mdp.n_states - 1)
        return self._eye[idx]

    def transition(self, h: int, s: Array, a: int, rng: np.random.Generator) -> Array:
        return self.transition_batch(h, s[None, :], np.array([a]), rng)[0]

    def transition_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        idx = np.argmax(states, axis=1)
        cdf = self._cum_trans[h - 1, idx, actions]  # (n, S)
        u = rng.random(len(idx))
        nxt = np.minimum((u[:, None] >= cdf).sum(axis=1), self.mdp.n_states - 1)
        return self._eye[nxt]

    def reward(self, h: int, s: Array, a: int, rng: np.random.Generator) -> float:
        return self.mean_reward(h, s, a)

    def reward_batch(self, h: int, states: Array, actions: Array, rng: np.random.Generator) -> Array:
        idx = np.argmax(states, axis=1)
        return self.mdp.rewards[h - 1, idx, actions]

    def mean_reward(self, h: int, s: Array, a: int) -> float:
        return float(self.mdp.rewards[h - 1, self._state_index(s), a])


def table_policy(table: Array) -> Policy:
    """Policy defined by an explicit (H, S, A) probability table.

    Intended for one-hot observations: the state index is recovered by
    argmax.
    """
    table = np.asarray(table, dtype=float)
    H, S, A = table.shape

    def prob_fn(h: int, s: Array) -> Array:
        return table[h - 1, int(np.argmax(s))]

    def batch_prob_fn(h: int, states: Array) -> Array:
        return table[h - 1, np.argmax(states, axis=1)]

    return Policy(H, A, prob_fn, batch_prob_fn, tag="table")


def load_tabular_mdp(path: str | Path) -> TabularMdp:
    """Load and validate a TabularMdp from a JSON document.

    Expected keys: "transitions", "rewards", "initial_dist".
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    missing = {"transitions", "rewards", "initial_dist"} - set(doc)
    if missing:
        raise ValueError(f"tabular MDP document missing keys: {sorted(missing)}")
    return TabularMdp(
        transitions=np.asarray(doc["transitions"], dtype=float),
        rewards=np.asarray(doc["rewards"], dtype=float),
        initial_dist=np.asarray(doc["initial_dist"], dtype=float),
    )


def bundled_mdp_names() -> list[str]:
    """Names of the tabular MDPs shipped with the package."""
    root = resources.files("fqeval").joinpath("data")
    return sorted(p.name.removesuffix(".json") for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled_mdp(name: str) -> TabularMdp:
    path = resources.files("fqeval").joinpath("data", f"{name}.json")
    with resources.as_file(path) as p:
        return load_tabular_mdp(p)
