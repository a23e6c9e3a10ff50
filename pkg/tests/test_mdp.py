import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fqeval.errors import ConfigurationError
from fqeval.mdp import (
    Policy,
    encode_state_actions,
    mixture_policy,
    point_mass_policy,
    policy_probs,
    policy_probs_batch,
    rollout,
    rollout_returns,
    sample_action,
    uniform_policy,
)
from fqeval.manifold_env import make_torus_env, make_target_policy, generate_step_dataset
from fqeval.oracles import monte_carlo_value

from conftest import ConstRewardEnv, TwoStateChainEnv, rng_of


def test_uniform_policy_probs():
    pol = uniform_policy(5, 2)
    for h in (1, 3, 5):
        assert np.allclose(policy_probs(pol, h, np.zeros(3)), [0.5, 0.5])


def test_point_mass_policy_probs():
    pol = point_mass_policy(4, 2, 1)
    assert np.allclose(policy_probs(pol, 2, np.zeros(2)), [0.0, 1.0])


def test_mixture_of_point_mass_and_uniform():
    target = point_mass_policy(3, 2, 0)
    mixed = mixture_policy(target, uniform_policy(3, 2), 0.8)
    assert np.allclose(policy_probs(mixed, 1, np.zeros(1)), [0.9, 0.1])


def test_policy_probs_step_out_of_range():
    pol = uniform_policy(3, 2)
    with pytest.raises(ValueError):
        policy_probs(pol, 0, np.zeros(1))
    with pytest.raises(ValueError):
        policy_probs(pol, 4, np.zeros(1))


def test_invalid_distribution_rejected():
    bad = Policy(2, 2, lambda h, s: np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        policy_probs(bad, 1, np.zeros(1))
    negative = Policy(2, 2, lambda h, s: np.array([1.2, -0.2]))
    with pytest.raises(ValueError):
        policy_probs(negative, 1, np.zeros(1))


def test_simplex_invariant_on_state_dependent_policy():
    env = make_torus_env(2, 6, 4, 3, dynamics_seed=1)
    pol = make_target_policy(env, seed=2)
    rng = rng_of(1)
    states = env.initial_sample_batch(1000, rng)
    for h in range(1, 5):
        p = policy_probs_batch(pol, h, states)
        assert np.all(p >= 0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-9


def test_point_mass_sampling_is_degenerate():
    pol = point_mass_policy(3, 4, 2)
    rng = rng_of(2)
    assert all(sample_action(pol, 1, np.zeros(1), rng) == 2 for _ in range(50))


def test_uniform_sampling_frequencies():
    pol = uniform_policy(1, 4)
    rng = rng_of(3)
    draws = np.array([sample_action(pol, 1, np.zeros(1), rng) for _ in range(100_000)])
    freqs = np.bincount(draws, minlength=4) / len(draws)
    assert np.all(np.abs(freqs - 0.25) < 0.01)


def test_sampling_deterministic_under_seed():
    env = make_torus_env(1, 4, 6, 2, dynamics_seed=5)
    pol = make_target_policy(env, seed=1)
    s = env.initial_sample(rng_of(4))
    a1 = [sample_action(pol, 1, s, rng_of(7)) for _ in range(20)]
    a2 = [sample_action(pol, 1, s, rng_of(7)) for _ in range(20)]
    assert a1 == a2


def test_rollout_constant_reward_return():
    env = ConstRewardEnv(horizon=3, reward=1.0)
    traj = rollout(env, uniform_policy(3, 2), rng_of(5))
    assert traj.total_return == 3.0
    assert len(traj.states) == 3


def test_rollout_matches_hand_trace_on_chain():
    env = TwoStateChainEnv(horizon=4)
    pol = point_mass_policy(4, 2, 0)  # always flip
    traj = rollout(env, pol, rng_of(6))
    expected_states = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
    assert np.array_equal(traj.states, expected_states)
    assert np.allclose(traj.rewards, [1.0, 0.5, 1.0, 0.5])
    assert traj.total_return == 3.0


def test_rollout_reproducible_bitwise():
    env = make_torus_env(2, 8, 5, 2, dynamics_seed=3)
    pol = make_target_policy(env, seed=4)
    t1 = rollout(env, pol, rng_of(8))
    t2 = rollout(env, pol, rng_of(8))
    assert np.array_equal(t1.states, t2.states)
    assert np.array_equal(t1.actions, t2.actions)
    assert np.array_equal(t1.rewards, t2.rewards)


def test_rollout_rejects_mismatched_action_count():
    env = ConstRewardEnv(horizon=3, action_count=2)
    with pytest.raises(ConfigurationError):
        rollout(env, uniform_policy(3, 3), rng_of(9))
    with pytest.raises(ConfigurationError):
        rollout(env, uniform_policy(4, 2), rng_of(9))


def test_absorbing_state_freezes_return():
    # One-hot 2-state env: state 1 is absorbing with zero reward, so the
    # return is fixed after absorption.
    class AbsorbingEnv(TwoStateChainEnv):
        def transition(self, h, s, a, rng):
            return np.array([0.0, 1.0])

        def mean_reward(self, h, s, a):
            return 1.0 if s[0] == 1.0 else 0.0

    env = AbsorbingEnv(horizon=5)
    traj = rollout(env, uniform_policy(5, 2), rng_of(10))
    assert np.allclose(traj.rewards, [1.0, 0.0, 0.0, 0.0, 0.0])
    assert traj.total_return == 1.0


def test_all_sampled_rewards_within_unit_interval():
    env = make_torus_env(1, 4, 5, 2, dynamics_seed=7)
    pol = make_target_policy(env, seed=0)
    for h in (1, 3, 5):
        ds = generate_step_dataset(env, pol, h, 4000, rng_of(11, h))
        assert ds.rewards.min() >= 0.0 and ds.rewards.max() <= 1.0
    # Plus full returns (sums of H per-step rewards) staying in [0, H].
    rets = rollout_returns(env, pol, 2000, rng_of(12))
    assert rets.min() >= 0.0 and rets.max() <= 5.0


def test_standard_error_shrinks_like_root_n():
    env = make_torus_env(1, 4, 6, 2, dynamics_seed=9)
    pol = make_target_policy(env, seed=3)
    small = monte_carlo_value(env, pol, 100, rng_of(13))
    large = monte_carlo_value(env, pol, 10_000, rng_of(14))
    ratio = small.std_error / large.std_error
    assert 5.0 <= ratio <= 20.0


def test_encode_state_actions_appends_one_hot():
    states = np.array([[0.5, -0.5], [1.0, 2.0]])
    encoded = encode_state_actions(states, np.array([1, 0]), 3)
    assert encoded.shape == (2, 5)
    assert np.array_equal(encoded[0], [0.5, -0.5, 0.0, 1.0, 0.0])
    assert np.array_equal(encoded[1], [1.0, 2.0, 1.0, 0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(w=st.floats(min_value=0.0, max_value=1.0), h=st.integers(min_value=1, max_value=4))
def test_mixture_probs_form_simplex(w, h):
    target = point_mass_policy(4, 3, 1)
    mixed = mixture_policy(target, uniform_policy(4, 3), w)
    p = policy_probs(mixed, h, np.zeros(2))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-9
