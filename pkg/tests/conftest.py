"""Shared test environments and helpers."""
from __future__ import annotations

import numpy as np
import pytest

from fqeval.mdp import Environment
from fqeval.seeding import substream


class ConstRewardEnv(Environment):
    """Scalar-state environment paying a fixed reward every step."""

    def __init__(self, horizon: int, reward: float = 1.0, action_count: int = 2):
        self.horizon = horizon
        self.action_count = action_count
        self.obs_dim = 1
        self.intrinsic_dim = 1
        self.bound_sup = 1.0
        self.reach = 1.0
        self._reward = reward

    def initial_sample(self, rng):
        return np.zeros(1)

    def transition(self, h, s, a, rng):
        return s

    def reward(self, h, s, a, rng):
        return self._reward

    def mean_reward(self, h, s, a):
        return self._reward


class TwoStateChainEnv(Environment):
    """Deterministic 2-state flip chain used for hand-traced rollouts.

    State is a one-hot pair; action 0 flips the state, action 1 keeps it.
    Reward is 1 in state 0 and 0.5 in state 1.
    """

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.action_count = 2
        self.obs_dim = 2
        self.intrinsic_dim = 2
        self.bound_sup = 1.0
        self.reach = 1.0

    def initial_sample(self, rng):
        return np.array([1.0, 0.0])

    def transition(self, h, s, a, rng):
        if a == 0:
            return s[::-1].copy()
        return s.copy()

    def reward(self, h, s, a, rng):
        return self.mean_reward(h, s, a)

    def mean_reward(self, h, s, a):
        return 1.0 if s[0] == 1.0 else 0.5


def rng_of(*key: int) -> np.random.Generator:
    return substream(20260301, *key)


def assert_class_membership(net, rng, n_inputs: int = 1000) -> None:
    """Every entry within the weight bound; clamped outputs within range."""
    tau = net.params.weight_bound
    for W in net.weights:
        assert np.all(np.abs(W) <= tau + 1e-12)
    for b in net.biases:
        assert np.all(np.abs(b) <= tau + 1e-12)
    X = rng.uniform(-1.5, 1.5, size=(n_inputs, net.params.input_dim))
    out = net.forward_batch(X)
    assert np.all(out >= 0.0) and np.all(out <= net.params.output_bound)


@pytest.fixture
def rng():
    return rng_of(0)
