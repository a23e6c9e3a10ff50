import json

import numpy as np
import pytest

from fqeval.manifold_env import make_torus_env, make_target_policy
from fqeval.mdp import point_mass_policy, uniform_policy
from fqeval.oracles import (
    TabularEnvWrapper,
    TabularMdp,
    bellman_residual,
    bundled_mdp_names,
    load_bundled_mdp,
    load_tabular_mdp,
    monte_carlo_value,
    table_policy,
    tabular_dp,
)

from conftest import rng_of


def one_step_mdp(reward: float) -> TabularMdp:
    return TabularMdp(
        transitions=np.ones((1, 1, 1, 1)),
        rewards=np.full((1, 1, 1), reward),
        initial_dist=np.array([1.0]),
    )


def test_single_state_single_action_value():
    _, v = tabular_dp(one_step_mdp(0.7), uniform_policy(1, 1))
    assert v == pytest.approx(0.7, abs=1e-15)


def test_two_state_chain_hand_backward_induction():
    # Deterministic move 0 -> 1; rewards 1.0 then 0.5 along the path.
    P = np.zeros((2, 2, 1, 2))
    P[:, 0, 0, 1] = 1.0
    P[:, 1, 0, 1] = 1.0
    r = np.zeros((2, 2, 1))
    r[0, 0, 0] = 1.0
    r[1, 1, 0] = 0.5
    mdp = TabularMdp(P, r, np.array([1.0, 0.0]))
    _, v = tabular_dp(mdp, uniform_policy(2, 1))
    assert v == pytest.approx(1.5, abs=1e-15)


def test_dp_is_bellman_fixed_point():
    mdp = load_bundled_mdp("drifting_ring")
    pol = uniform_policy(mdp.horizon, mdp.n_actions)
    Q, _ = tabular_dp(mdp, pol)
    assert bellman_residual(mdp, pol, Q) <= 1e-12


def test_bad_row_sums_rejected():
    P = np.ones((1, 1, 1, 1)) * 0.9
    with pytest.raises(ValueError):
        TabularMdp(P, np.zeros((1, 1, 1)), np.array([1.0]))


def test_monte_carlo_deterministic_env():
    from conftest import ConstRewardEnv

    est = monte_carlo_value(ConstRewardEnv(horizon=3), uniform_policy(3, 2), 50, rng_of(1))
    assert est.mean == 3.0
    assert est.std_error == 0.0


def test_monte_carlo_bernoulli_rewards():
    # reward_scale 0 makes every reward Bernoulli(0.5); the value of a
    # 10-step episode is 5.
    env = make_torus_env(1, 4, 10, 2, dynamics_seed=0, reward_scale=0.0)
    est = monte_carlo_value(env, uniform_policy(10, 2), 100_000, rng_of(2))
    assert abs(est.mean - 5.0) < 0.05


def test_monte_carlo_requires_two_rollouts():
    from conftest import ConstRewardEnv

    with pytest.raises(ValueError):
        monte_carlo_value(ConstRewardEnv(horizon=1), uniform_policy(1, 2), 1, rng_of(3))


def test_monte_carlo_matches_dp_on_wrapped_tabular():
    mdp = load_bundled_mdp("two_room")
    target = table_policy(
        np.tile(np.array([[0.8, 0.2], [0.3, 0.7]])[None], (mdp.horizon, 1, 1))
    )
    _, v = tabular_dp(mdp, target)
    est = monte_carlo_value(TabularEnvWrapper(mdp), target, 100_000, rng_of(4))
    assert abs(est.mean - v) <= 4 * est.std_error + 1e-12


def test_wrapped_env_emits_one_hot_states():
    mdp = load_bundled_mdp("drifting_ring")
    env = TabularEnvWrapper(mdp)
    s = env.initial_sample_batch(100, rng_of(5))
    assert np.array_equal(np.sort(np.unique(s)), [0.0, 1.0])
    assert np.all(s.sum(axis=1) == 1.0)
    nxt = env.transition_batch(1, s, np.zeros(100, dtype=np.int64), rng_of(6))
    assert np.all(nxt.sum(axis=1) == 1.0)


def test_loader_validates_document(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"transitions": [[[[1.0]]]], "rewards": [[[0.5]]]}))
    with pytest.raises(ValueError, match="missing keys"):
        load_tabular_mdp(path)
    path.write_text(
        json.dumps(
            {
                "transitions": [[[[0.5]]]],
                "rewards": [[[0.5]]],
                "initial_dist": [1.0],
            }
        )
    )
    with pytest.raises(ValueError, match="sum to 1"):
        load_tabular_mdp(path)


def test_bundled_mdps_load_and_validate():
    names = bundled_mdp_names()
    assert len(names) == 3
    for name in names:
        mdp = load_bundled_mdp(name)
        assert mdp.n_states <= 20 and mdp.n_actions <= 4 and mdp.horizon <= 5


def test_loader_round_trip(tmp_path):
    mdp = load_bundled_mdp("chain_deterministic")
    path = tmp_path / "copy.json"
    path.write_text(
        json.dumps(
            {
                "transitions": mdp.transitions.tolist(),
                "rewards": mdp.rewards.tolist(),
                "initial_dist": mdp.initial_dist.tolist(),
            }
        )
    )
    again = load_tabular_mdp(path)
    assert np.array_equal(again.transitions, mdp.transitions)
    assert np.array_equal(again.rewards, mdp.rewards)


def test_point_mass_rollout_on_wrapper_matches_dp_exactly():
    mdp = load_bundled_mdp("chain_deterministic")
    pol = point_mass_policy(mdp.horizon, mdp.n_actions, 0)
    _, v = tabular_dp(mdp, pol)
    est = monte_carlo_value(TabularEnvWrapper(mdp), pol, 10, rng_of(7))
    assert est.mean == pytest.approx(v, abs=1e-12)
    assert est.std_error == 0.0
