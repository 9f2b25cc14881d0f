from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from myopic_gap.cli import main
from myopic_gap.eluder import EvaluatedClass
from myopic_gap.mdp import content_hash, loads


def run(capsys, *argv):
    assert main(list(argv)) == 0
    return capsys.readouterr().out


def write_config(tmp_path, **over):
    cfg = {"env": {"name": "bandit", "means": [[0.3, 0.6]]},
           "learner": {"exploration": {"kind": "eps_greedy", "eps": 0.2}, "episodes": 40},
           "seeds": [0, 1], "lambdas": [0.0]}
    cfg.update(over)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


class TestGap:
    def test_tree(self, capsys):
        out = json.loads(run(capsys, "gap", "--name", "tree", "--H", "3", "--eps", "0.3",
                             "--greedy", json.dumps(np.zeros((3, 7), int).tolist())))
        assert out["schema_version"] == 1 and out["search_mode"] == "exhaustive"
        assert out["alpha"] == pytest.approx(0.1382931668593933, abs=1e-12)

    def test_certified_and_file(self, capsys, tmp_path):
        env = tmp_path / "env.json"
        env.write_text(run(capsys, "env", "dump", "--name", "chain", "--h-star", "2", "--env-eps", "0.5"))
        out = json.loads(run(capsys, "gap", "--env", str(env), "--mode", "certified",
                             "--explore", '{"kind": "eps_greedy", "eps": 0.5}'))
        assert out["search_mode"] == "certified_lower_bound"

    def test_bad_q_shape(self, capsys):
        with pytest.raises(SystemExit):
            main(["gap", "--name", "tree", "--H", "2", "--q", "[[[0.0]]]"])

    def test_bounds(self, capsys, tmp_path):
        out_path = tmp_path / "b.json"
        run(capsys, "bounds", "--name", "bandit", "--means", "[[0.2, 0.7]]", "--eps", "0.1", "--out", str(out_path))
        row = json.loads(out_path.read_text())
        assert row["bandit"] <= row["alpha"] + 1e-9


class TestOtherCommands:
    def test_env_dump_roundtrip(self, capsys):
        M = loads(run(capsys, "env", "dump", "--name", "grid", "--variant", "helpful"))
        from myopic_gap.envs import canonical_grid, grid_world
        assert content_hash(M) == content_hash(grid_world(canonical_grid("helpful")).mdp)

    def test_covering(self, capsys):
        out = json.loads(run(capsys, "covering", "--name", "bandit", "--means", "[[0.5, 0.5], [0.5, 0.5]]",
                             "--trials", "500", "--budget", "100", "--seed", "1"))
        assert out["p_min"] == 0.25 and 5 <= out["empirical_L"] <= 9

    def test_eluder_class(self, capsys, tmp_path):
        p = tmp_path / "cls.json"
        p.write_text(json.dumps(EvaluatedClass(np.eye(4)).to_dict()))
        out = json.loads(run(capsys, "eluder", "--class", str(p), "--eps", "0.5"))
        assert out["kind"] == "dim_de" and out["dim"] == 4

    def test_eluder_env(self, capsys):
        out = json.loads(run(capsys, "eluder", "--name", "bandit", "--means", "[[0.2, 0.5, 0.8]]", "--eps", "0.5"))
        assert out["kind"] == "dim_be" and out["dim"] == 3

    def test_simulate(self, capsys, tmp_path):
        cfg = write_config(tmp_path)
        out = json.loads(run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path / "art")))
        assert out["optimal_within_T"] + out["not_optimal_within_T"] == 2
        assert (tmp_path / "art" / "summary.json").exists()
        assert (tmp_path / "art" / "regret_seed1.csv").exists()

    def test_sweep(self, capsys, tmp_path):
        cfg = write_config(tmp_path)
        out = run(capsys, "sweep", "--config", str(cfg), "--eps-grid", "0.1,0.4")
        lines = out.strip().splitlines()
        assert lines[0].startswith("eps,regret,greedy_term,exploration_term,exploration_cap")
        assert len(lines) == 3

    def test_module_entry_point(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "myopic_gap", "env", "dump", "--name", "tree", "--H", "2"],
                           capture_output=True, text=True, check=True)
        assert loads(r.stdout).S == 3

    def test_missing_env(self):
        with pytest.raises(SystemExit):
            main(["gap"])
