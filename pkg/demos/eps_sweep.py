"""Regret of eps-greedy on a two-armed bandit as a function of eps and T.

Small eps leaves the greedy arm stuck on the worse arm for long stretches; large eps pays
eps/2 times the gap on every episode.  The best eps shrinks with T and the best regret
grows roughly like T^(2/3).
"""
from __future__ import annotations

import argparse

import numpy as np

from myopic_gap.harness import batched_bandit_regret, make_env, regret_exponent
from myopic_gap.learner import LearnerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--T", type=int, nargs="+", default=[5_000, 20_000, 80_000])
    ap.add_argument("--gap", type=float, default=0.01, help="difference between the arm means")
    args = ap.parse_args()

    M = make_env({"name": "bandit", "means": [[0.5 - args.gap, 0.5]]})
    grid = np.geomspace(0.002, 0.5, 17)
    Ts = sorted(args.T)
    b = batched_bandit_regret(M, LearnerConfig(), grid, list(range(args.seeds)), Ts[-1], Ts)
    mean = b["regret"].mean(axis=2)
    for i, T in enumerate(Ts):
        j = int(mean[i].argmin())
        print(f"T={T:>7}: best eps {grid[j]:.4f}, mean regret {mean[i, j]:.2f}")
    print(f"fitted exponent of the swept-optimal regret: {regret_exponent(Ts, mean.min(axis=1)):.3f}")


if __name__ == "__main__":
    main()
