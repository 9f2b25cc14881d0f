from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myopic_gap.envs import ChainSpec, chain_adversarial_seed, chain_mdp, random_mdp, tree_mdp
from myopic_gap.learner import (
    LearnerConfig,
    TransitionDataset,
    fit_q,
    run_myopic_rl,
    seed_dataset,
    squared_loss,
    suboptimality_census,
)
from myopic_gap.mdp import optimal_values
from myopic_gap.policies import ExplorationMapping

EPS = ExplorationMapping("eps_greedy", 0.2)


class TestFitQ:
    def test_empty_constant_zero(self):
        f = fit_q(TransitionDataset(3, 2, 2), LearnerConfig())
        assert np.all(f == 0)

    def test_default_rules(self):
        D = TransitionDataset(2, 1, 2)
        assert np.all(fit_q(D, LearnerConfig(default_value="range_max")) == 1.0)
        assert np.all(fit_q(D, LearnerConfig(default_value="range_min")) == 0.0)
        f = fit_q(D, LearnerConfig(default_value="range_max", value_range=[[0, 2], [0, 1]]))
        assert f[0].max() == 2.0 and f[1].max() == 1.0
        with pytest.raises(ValueError):
            fit_q(D, LearnerConfig(default_value=3.0))

    def test_single_tuple_last_step(self):
        D = TransitionDataset(2, 2, 2)
        D.add(1, 0, 1, 0.5, 1)
        assert fit_q(D, LearnerConfig())[1, 0, 1] == 0.5

    def test_mean_of_two(self):
        D = TransitionDataset(1, 1, 1)
        D.add(0, 0, 0, 0.2, 0)
        D.add(0, 0, 0, 0.4, 0)
        assert fit_q(D, LearnerConfig())[0, 0, 0] == pytest.approx(0.3)

    def test_backward_targets_and_clip(self):
        D = TransitionDataset(2, 2, 1)
        D.add(1, 1, 0, 0.9, 0)
        D.add(0, 0, 0, 0.5, 1)
        f = fit_q(D, LearnerConfig())
        assert f[0, 0, 0] == 1.0  # 0.5 + 0.9 clipped into [0, 1]

    @pytest.mark.parametrize("h_star", [2, 3, 4])
    def test_chain_seeded_values(self, h_star):
        spec = ChainSpec(H=h_star, A=2, eps=0.5, h_star=h_star)
        M = chain_mdp(spec)
        cfg = LearnerConfig(dataset_seeding="one_sample_per_pair",
                            seed_reward_overrides=chain_adversarial_seed(spec))
        f = fit_q(seed_dataset(M, cfg), cfg)
        for h in range(1, h_star + 1):
            assert f[h - 1, 0, 0] == pytest.approx((h_star - h) / (8 * h_star), abs=1e-15)
            assert f[h - 1, 0, 1] == pytest.approx((h_star - h + 1) / (8 * h_star), abs=1e-15)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31))
    def test_first_order_optimality(self, seed):
        r = np.random.default_rng(seed)
        H, S, A = 3, 3, 2
        D = TransitionDataset(H, S, A)
        for _ in range(r.integers(1, 30)):
            D.add(int(r.integers(H)), int(r.integers(S)), int(r.integers(A)), float(r.random() / H),
                  int(r.integers(S)))
        f = fit_q(D, LearnerConfig())
        for h in range(H):
            base = squared_loss(D, f, h)
            for x in range(S):
                for a in range(A):
                    for _ in range(10):
                        g = f.copy()
                        g[h, x, a] = r.random()
                        assert squared_loss(D, g, h) >= base - 1e-12

    def test_index_errors(self):
        with pytest.raises(IndexError):
            TransitionDataset(1, 1, 1).add(0, 2, 0, 0.0, 0)


class TestRun:
    def test_zero_episodes(self):
        log = run_myopic_rl(tree_mdp(2).mdp, LearnerConfig(EPS, episodes=0))
        assert len(log) == 0
        assert log.to_csv().strip() == "episode,greedy_value,explore_value,realized_return,subopt_gap"

    def test_deterministic_seeded_equals_qstar(self, rng):
        M = random_mdp(4, 3, 3, rng, deterministic=True, stochastic_rewards=False)
        cfg = LearnerConfig(ExplorationMapping("none", 0.0), episodes=25, dataset_seeding="one_sample_per_pair",
                            keep_tables=True)
        log = run_myopic_rl(M, cfg)
        Q = optimal_values(M).Q
        for f in log.tables:
            np.testing.assert_allclose(f, Q, atol=1e-9)
        assert np.all(log.subopt_gaps <= 1e-12)

    def test_monotone_data_with_exploration(self, rng):
        M = random_mdp(3, 2, 3, rng, deterministic=True, stochastic_rewards=False)
        cfg = LearnerConfig(ExplorationMapping("eps_greedy", 0.5), episodes=30,
                            dataset_seeding="one_sample_per_pair", keep_tables=True)
        tabs = run_myopic_rl(M, cfg).tables
        for f in tabs:
            np.testing.assert_allclose(f, tabs[0], atol=1e-12)

    def test_incremental_equals_full_refit(self, rng):
        for variant in ("goal", "path"):
            M = tree_mdp(3, variant).mdp
            a = run_myopic_rl(M, LearnerConfig(EPS, episodes=300, seed=4, keep_tables=True))
            b = run_myopic_rl(M, LearnerConfig(EPS, episodes=300, seed=4, keep_tables=True,
                                               perturbation=lambda h, fh: 0.0))
            for fa, fb in zip(a.tables, b.tables):
                np.testing.assert_allclose(fa, fb, atol=1e-12)
        M = random_mdp(3, 2, 3, rng)
        for dv in (0.0, "range_max"):
            a = run_myopic_rl(M, LearnerConfig(EPS, episodes=200, seed=1, default_value=dv, keep_tables=True))
            b = run_myopic_rl(M, LearnerConfig(EPS, episodes=200, seed=1, default_value=dv, keep_tables=True,
                                               perturbation=lambda h, fh: 0.0))
            np.testing.assert_allclose(np.array(a.tables), np.array(b.tables), atol=1e-12)
            np.testing.assert_array_equal(a.greedy_values, b.greedy_values)

    def test_softmax_run(self, rng):
        M = random_mdp(3, 2, 3, rng)
        log = run_myopic_rl(M, LearnerConfig(ExplorationMapping("softmax", 0.0, 3.0), episodes=50))
        assert len(log) == 50 and np.all(np.isfinite(log.explore_values))

    def test_determinism(self, rng):
        M = random_mdp(3, 2, 3, rng)
        cfg = LearnerConfig(EPS, episodes=120, seed=9)
        a, b = run_myopic_rl(M, cfg), run_myopic_rl(M, cfg)
        assert a.to_csv() == b.to_csv()
        assert json.dumps(a.sidecar()) == json.dumps(b.sidecar())
        assert a.f_hashes == b.f_hashes

    @settings(max_examples=15)
    @given(st.integers(0, 2**31), st.floats(0.01, 1.0))
    def test_exploration_gap_bounded(self, seed, eps):
        M = random_mdp(3, 2, 3, seed)
        log = run_myopic_rl(M, LearnerConfig(ExplorationMapping("eps_greedy", eps), episodes=40, seed=seed))
        assert np.all(log.greedy_values - log.explore_values <= eps * M.H + 1e-12)

    def test_values_exact(self, rng):
        from myopic_gap.mdp import policy_value
        M = random_mdp(3, 2, 3, rng)
        log = run_myopic_rl(M, LearnerConfig(EPS, episodes=40, keep_tables=True))
        for t in range(40):
            f = log.tables[t]
            assert log.greedy_values[t] == pytest.approx(
                policy_value(M, np.eye(2)[f.argmax(-1)]).value, abs=1e-12)
            assert log.explore_values[t] == pytest.approx(policy_value(M, EPS(f)).value, abs=1e-12)

    def test_write(self, tmp_path, rng):
        M = random_mdp(2, 2, 2, rng)
        log = run_myopic_rl(M, LearnerConfig(EPS, episodes=5))
        log.write(tmp_path / "r.csv", tmp_path / "r.json")
        side = json.loads((tmp_path / "r.json").read_text())
        assert side["schema_version"] == 1 and side["env_hash"] == log.env_hash
        assert np.array(side["final_q"]).shape == (2, 2, 2)
        assert (tmp_path / "r.csv").read_text().count("\n") == 6


class TestCensus:
    def test_lambda_one(self, rng):
        M = random_mdp(3, 2, 3, rng)
        log = run_myopic_rl(M, LearnerConfig(EPS, episodes=50))
        assert suboptimality_census(log, M, 1.0)[0] == 0

    def test_optimal_log(self, rng):
        M = random_mdp(3, 2, 2, rng, deterministic=True, stochastic_rewards=False)
        log = run_myopic_rl(M, LearnerConfig(ExplorationMapping("none", 0.0), episodes=10,
                                             dataset_seeding="one_sample_per_pair"))
        for lam in (0.0, 0.1, 0.5):
            assert suboptimality_census(log, M, lam)[0] == 0

    def test_monotone_in_lambda(self, rng):
        M = random_mdp(3, 2, 3, rng)
        log = run_myopic_rl(M, LearnerConfig(EPS, episodes=100))
        counts = [suboptimality_census(log, M, lam)[0] for lam in np.linspace(0, 1, 11)]
        assert counts == sorted(counts, reverse=True)

    def test_errors(self, rng):
        M = random_mdp(3, 2, 3, rng)
        log = run_myopic_rl(M, LearnerConfig(EPS, episodes=5))
        with pytest.raises(ValueError):
            suboptimality_census(log, M, -0.1)
        with pytest.raises(ValueError):
            suboptimality_census(log, random_mdp(3, 2, 3, 99), 0.0)


class TestConfig:
    def test_roundtrip(self):
        cfg = LearnerConfig(ExplorationMapping("softmax", 0.0, 2.0), episodes=7, seed=3, default_value="range_max",
                            dataset_seeding="one_sample_per_pair", seed_reward_overrides={(1, 0, 0): 0.0})
        back = LearnerConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back.to_dict() == cfg.to_dict()

    def test_explore_key(self):
        cfg = LearnerConfig.from_dict({"explore": {"kind": "eps_greedy", "eps": 0.1}})
        assert cfg.exploration.eps == 0.1

    def test_invalid(self):
        with pytest.raises(ValueError):
            LearnerConfig(dataset_seeding="two")
        with pytest.raises(ValueError):
            LearnerConfig(default_value="middle")
        with pytest.raises(ValueError):
            LearnerConfig(episodes=-1)
