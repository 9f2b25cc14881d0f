"""Eps-greedy fitted Q-iteration on the 4x4 grid with and without breadcrumbs.

Helpful crumbs on the shortest path let the learner bootstrap towards the goal; without
them it must stumble on the goal by chance; a distracting trail pulls the greedy policy
into a dead end worth 0.2 that it rarely leaves.
"""
from __future__ import annotations

import argparse

import numpy as np

from myopic_gap.harness import ExperimentConfig, run_experiment
from myopic_gap.learner import LearnerConfig
from myopic_gap.policies import ExplorationMapping


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--eps", type=float, default=0.2)
    ap.add_argument("--out", help="write per-run artifacts under this directory")
    args = ap.parse_args()

    for variant in ("helpful", "sparse", "distracting"):
        cfg = ExperimentConfig({"name": "grid", "variant": variant},
                               LearnerConfig(ExplorationMapping("eps_greedy", args.eps), episodes=args.episodes),
                               list(range(args.seeds)), [0.0],
                               f"{args.out}/{variant}" if args.out else None)
        res = run_experiment(cfg)
        s = res.summary()
        final = np.mean([log.greedy_values[-1] for log in res.logs])
        print(f"{variant:>12}: optimal greedy in {s['optimal_within_T']}/{args.seeds} runs, "
              f"median episodes {s['median_episodes_to_optimal']}, mean final greedy value {final:.3f} "
              f"(optimum {res.optimal_value:.3f})")


if __name__ == "__main__":
    main()
