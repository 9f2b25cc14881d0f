from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myopic_gap.envs import ChainSpec, chain_mdp, random_mdp, tree_mdp
from myopic_gap.mdp import (
    RELAXED,
    TabularMDP,
    bellman_apply,
    bellman_residual,
    check_policy,
    content_hash,
    deterministic_policy,
    dumps,
    loads,
    max_episode_reward,
    occupancy,
    optimal_values,
    policy_value,
    residual_expectations,
    sample_batch,
    sample_episode,
    uniform_policy,
    validate,
)
from myopic_gap.policies import eps_greedy

import oracles
from strategies import random_policy, random_q, small_mdps


def two_state_chain():
    """x0 -a-> x1, reward 1 on the last step from x1."""
    P = np.zeros((2, 2, 1, 2))
    P[:, :, 0, 1] = 1.0
    r = np.zeros((2, 2, 1))
    r[1, 1, 0] = 1.0
    return TabularMDP.deterministic(P, r)


class TestValidate:
    def test_budget_exactly_one(self):
        rep = validate(two_state_chain())
        assert rep.ok
        assert rep.budget == pytest.approx(1.0)

    def test_bad_row_sum(self):
        P = np.array([[[[0.5, 0.4]], [[0.0, 1.0]]]])
        M = TabularMDP.deterministic(P, np.zeros((1, 2, 1)))
        rep = validate(M)
        assert not rep.ok
        assert any("row sum 0.9" in v for v in rep.violations)

    def test_budget_violation_reports_value(self):
        P = np.zeros((2, 1, 1, 1))
        P[..., 0] = 1.0
        M = TabularMDP.deterministic(P, np.full((2, 1, 1), 0.6))
        rep = validate(M)
        assert not rep.ok
        assert "W_1(x_init) = 1.2" in rep.violations[0]

    def test_negative_reward_standard_mode(self):
        P = np.ones((1, 1, 1, 1))
        M = TabularMDP.deterministic(P, -0.5 * np.ones((1, 1, 1)))
        assert not validate(M).ok
        assert validate(TabularMDP.deterministic(P, -0.5 * np.ones((1, 1, 1)), mode=RELAXED)).ok

    def test_relaxed_range(self):
        P = np.ones((1, 1, 1, 1))
        M = TabularMDP.deterministic(P, -1.5 * np.ones((1, 1, 1)), mode=RELAXED)
        assert not validate(M).ok

    def test_reward_probability_sum(self):
        P = np.ones((1, 1, 1, 1))
        M = TabularMDP(P, np.array([[[[0.0, 1.0]]]]), np.array([[[[0.5, 0.3]]]]))
        assert any("probability sum" in v for v in validate(M).violations)

    @pytest.mark.parametrize("h_star", [1, 2, 3])
    def test_chain_budget(self, h_star):
        # worst case: stay good until h*, collect the Bernoulli top value 1 -> budget 1
        M = chain_mdp(ChainSpec(H=h_star + 1, A=2, eps=0.5, h_star=h_star))
        rep = validate(M)
        assert rep.ok
        # oracle: brute force over trajectories of the max-support rewards
        best = 0.0
        for t in oracles.all_deterministic(M):
            for _, xs, acts in oracles.trajectories(M, oracles.onehot(t, M.A)):
                tot = 0.0
                for h, a in enumerate(acts):
                    live = M.reward_probs[h, xs[h], a] > 0
                    tot += M.reward_support[h, xs[h], a][live].max()
                best = max(best, tot)
        assert rep.budget == pytest.approx(best, abs=1e-12)

    def test_immutable(self):
        M = two_state_chain()
        with pytest.raises(ValueError):
            M.P[0, 0, 0, 0] = 1.0

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            TabularMDP(np.ones((1, 2, 1, 3)), np.zeros((1, 2, 1, 1)), np.ones((1, 2, 1, 1)))
        with pytest.raises(ValueError):
            TabularMDP(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1)), x_init=3)


class TestOccupancy:
    def test_single_path(self):
        M = two_state_chain()
        mu = occupancy(M, deterministic_policy(np.zeros((2, 2), int), 1))
        assert mu[0, 0, 0] == 1.0 and mu[1, 1, 0] == 1.0
        assert mu.sum() == 2.0

    def test_chain_stay_probability(self):
        M = chain_mdp(ChainSpec(H=2, A=2, eps=0.5, h_star=2))
        f = np.zeros((2, 2, 2))
        f[:, :, 0] = 1.0
        mu = occupancy(M, eps_greedy(f, 0.5))
        assert mu[1, 0, 0] == pytest.approx(0.5625, abs=1e-15)

    def test_matches_trajectory_enumeration(self, rng):
        for _ in range(20):
            M = random_mdp(3, 2, 3, rng, sparsity=0.3)
            pi = random_policy(M, rng)
            np.testing.assert_allclose(occupancy(M, pi), oracles.occupancy_enum(M, pi), atol=1e-12)

    @given(small_mdps(), st.integers(0, 2**31))
    def test_slices_normalized(self, M, seed):
        pi = random_policy(M, np.random.default_rng(seed))
        np.testing.assert_allclose(occupancy(M, pi).sum(axis=(1, 2)), 1.0, atol=1e-10)

    @given(small_mdps(), st.integers(0, 2**31))
    def test_value_duality(self, M, seed):
        pi = random_policy(M, np.random.default_rng(seed))
        lhs = float((occupancy(M, pi) * M.mean_reward).sum())
        assert lhs == pytest.approx(policy_value(M, pi).value, abs=1e-10)


class TestValues:
    def test_zero_rewards(self):
        M = random_mdp(3, 2, 3, 0, stochastic_rewards=False).with_rewards(
            np.zeros((3, 3, 2, 1)), np.ones((3, 3, 2, 1)))
        assert np.all(policy_value(M, uniform_policy(M)).V == 0)

    def test_chain_values(self):
        M = chain_mdp(ChainSpec(H=3, A=2, eps=0.5, h_star=3))
        leave = np.ones((3, 2), int)
        assert policy_value(M, deterministic_policy(leave, 2)).value == pytest.approx(1 / 8)
        assert optimal_values(M).value == pytest.approx(3 / 8)

    def test_tree_goal_optimum(self):
        assert optimal_values(tree_mdp(4, "goal").mdp).value == 1.0

    def test_policy_value_matches_enumeration(self, rng):
        for _ in range(20):
            M = random_mdp(3, 2, 3, rng)
            pi = random_policy(M, rng)
            assert policy_value(M, pi).value == pytest.approx(oracles.value_enum(M, pi), abs=1e-12)

    def test_optimal_dominates_every_deterministic_policy(self, rng):
        M = random_mdp(3, 2, 3, rng)
        opt = optimal_values(M)
        for t in oracles.all_deterministic(M):
            pv = policy_value(M, oracles.onehot(t, 2))
            assert np.all(opt.Q >= pv.Q - 1e-12)
        assert opt.value == pytest.approx(oracles.optimal_value_enum(M), abs=1e-12)

    def test_tie_break_lowest_action(self):
        P = np.ones((1, 1, 3, 1))
        M = TabularMDP.deterministic(P, np.array([[[0.2, 0.5, 0.5]]]))
        assert optimal_values(M).policy[0, 0].tolist() == [0, 1, 0]


class TestBellman:
    def test_zero_next_gives_mean_reward(self, rng):
        M = random_mdp(3, 2, 2, rng)
        np.testing.assert_array_equal(bellman_apply(M, np.zeros((3, 2)), 0), M.mean_reward[0])
        np.testing.assert_array_equal(bellman_apply(M, None, 1), M.mean_reward[1])

    def test_reproduces_qstar(self, rng):
        M = random_mdp(4, 3, 3, rng)
        Q = optimal_values(M).Q
        for h in range(M.H - 1):
            np.testing.assert_allclose(bellman_apply(M, Q[h + 1], h), Q[h], atol=1e-12)

    def test_hand_computed(self):
        # two states, deterministic: (x0, a0) -> x1, (x0, a1) -> x0
        P = np.zeros((2, 2, 2, 2))
        P[0, 0, 0, 1] = P[0, 0, 1, 0] = 1.0
        P[0, 1, :, 1] = 1.0
        P[1] = P[0]
        r = np.zeros((2, 2, 2))
        r[0, 0, 0] = 0.25
        M = TabularMDP.deterministic(P, r)
        f_next = np.array([[0.0, 1.0], [0.5, 0.0]])
        out = bellman_apply(M, f_next, 0)
        assert out[0, 0] == 0.25 + 0.5
        assert out[0, 1] == 1.0

    def test_residual_zero_at_optimum(self, rng):
        for _ in range(10):
            M = random_mdp(3, 3, 4, rng)
            assert np.abs(bellman_residual(M, optimal_values(M).Q)).max() <= 1e-9

    def test_residual_of_zero(self, rng):
        M = random_mdp(3, 2, 3, rng)
        np.testing.assert_allclose(bellman_residual(M, np.zeros((3, 3, 2))), -M.mean_reward)

    @given(small_mdps(), st.integers(0, 2**31))
    def test_jensen(self, M, seed):
        r = np.random.default_rng(seed)
        e1, e2 = residual_expectations(M, random_q(M, r), random_policy(M, r))
        assert np.all(e2 >= e1**2 - 1e-12)


class TestSampling:
    def test_deterministic_trajectory(self):
        M = two_state_chain()
        pi = deterministic_policy(np.zeros((2, 2), int), 1)
        for s in range(5):
            ep = sample_episode(M, pi, s)
            assert ep.states == (0, 1, 1) and ep.ret == 1.0

    def test_same_seed_same_episode(self, rng):
        M = random_mdp(3, 2, 4, rng)
        pi = random_policy(M, rng)
        assert sample_episode(M, pi, 7) == sample_episode(M, pi, 7)

    def test_episode_invariants(self, rng):
        M = random_mdp(3, 2, 4, rng, sparsity=0.4)
        pi = random_policy(M, rng)
        for s in range(50):
            ep = sample_episode(M, pi, s)
            assert ep.states[0] == M.x_init
            for h, x, a, r, y in ep.transitions:
                assert M.P[h, x, a, y] > 0
                live = M.reward_probs[h, x, a] > 0
                assert r in M.reward_support[h, x, a][live]

    def test_action_frequencies(self):
        M = chain_mdp(ChainSpec(H=2, A=2, eps=0.5, h_star=2))
        f = np.zeros((2, 2, 2))
        f[:, :, 0] = 1.0
        pi = eps_greedy(f, 0.2)
        n = 100_000
        states, actions, _ = sample_batch(M, pi, np.random.default_rng(1), n)
        p = pi[0, 0, 0]
        freq = (actions[:, 0] == 0).mean()
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_monte_carlo_return(self, rng):
        M = random_mdp(3, 2, 3, rng)
        pi = random_policy(M, rng)
        n = 100_000
        _, _, ret = sample_batch(M, pi, np.random.default_rng(3), n)
        assert abs(ret.mean() - policy_value(M, pi).value) <= 3 * ret.std() / np.sqrt(n)

    def test_batch_and_single_agree_in_law(self, rng):
        M = random_mdp(2, 2, 2, rng)
        pi = random_policy(M, rng)
        single = np.array([sample_episode(M, pi, s).ret for s in range(20_000)])
        assert abs(single.mean() - policy_value(M, pi).value) <= 4 * single.std() / np.sqrt(len(single))


class TestPolicies:
    def test_check_policy(self):
        with pytest.raises(ValueError):
            check_policy(np.full((1, 1, 2), 0.3))
        check_policy(np.full((1, 1, 2), 0.5))


class TestSerialization:
    @settings(max_examples=25)
    @given(small_mdps())
    def test_roundtrip(self, M):
        M2 = loads(dumps(M))
        np.testing.assert_array_equal(M2.P, M.P)
        np.testing.assert_array_equal(M2.mean_reward, M.mean_reward)
        assert content_hash(M2) == content_hash(M)

    def test_json_layout(self):
        M = chain_mdp(ChainSpec(H=2, A=2, eps=0.5, h_star=2))
        doc = json.loads(dumps(M))
        assert set(doc) >= {"S", "A", "H", "x_init", "P", "R", "mode"}
        assert doc["R"][1][0][0] == {"support": [0.0, 1.0], "probs": [0.625, 0.375]}

    def test_full_precision(self):
        P = np.zeros((1, 1, 1, 1)) + 1.0
        M = TabularMDP.deterministic(P, np.array([[[1 / 3]]]))
        assert loads(dumps(M)).mean_reward[0, 0, 0] == 1 / 3

    def test_init_dist_roundtrip(self):
        M = chain_mdp(ChainSpec(H=2, A=2, eps=0.5, h_star=2, copies=3))
        np.testing.assert_array_equal(loads(dumps(M)).start_dist, M.start_dist)

    def test_budget_dp_matches_enumeration(self, rng):
        M = random_mdp(3, 2, 3, rng, sparsity=0.5)
        best = 0.0
        for t in oracles.all_deterministic(M):
            for _, xs, acts in oracles.trajectories(M, oracles.onehot(t, 2)):
                best = max(best, sum(M.reward_support[h, xs[h], a].max() for h, a in enumerate(acts)))
        assert max_episode_reward(M) == pytest.approx(best, abs=1e-12)
