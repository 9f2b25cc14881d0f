"""The two-chain lower-bound instance.

Staying on the good chain for h* steps pays a Bernoulli(3/8) reward; leaving early pays a
small deterministic amount.  If the single seeded sample of the Bernoulli pair is a zero,
the greedy policy leaves at once and eps-greedy revisits the pair with probability only
(eps/A)^h* per episode.  The demo prints the exact gap and the empirical time the learner
needs to recover.
"""
from __future__ import annotations

import argparse

import numpy as np

from myopic_gap.envs import ChainSpec, chain_mdp
from myopic_gap.gap import gap_over_class, greedy_representatives
from myopic_gap.harness import ExperimentConfig, run_experiment
from myopic_gap.learner import LearnerConfig
from myopic_gap.policies import ExplorationMapping


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.5)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--episodes", type=int, default=1000)
    args = ap.parse_args()
    A, lam = 2, 1 / 16

    for h_star in (2, 3):
        M = chain_mdp(ChainSpec(H=h_star, A=A, eps=args.eps, h_star=h_star))
        cg = gap_over_class(M, greedy_representatives(M), ExplorationMapping("eps_greedy", args.eps))
        print(f"h*={h_star}: smallest gap over suboptimal greedy tables {cg.alpha:.6g} "
              f"(1/4 (eps/A)^(h*/2) = {0.25 * (args.eps / A) ** (h_star / 2):.6g})")

        cfg = ExperimentConfig({"name": "chain", "H": h_star, "h_star": h_star, "eps": args.eps, "A": A},
                               LearnerConfig(ExplorationMapping("eps_greedy", args.eps), episodes=args.episodes),
                               list(range(args.seeds)), [lam], adversarial=True)
        res = run_experiment(cfg, write=False)
        last = np.array([r.last_suboptimal[lam] for r in res.reports])
        print(f"      last episode with a {lam}-suboptimal greedy policy: mean {last.mean():.1f}, "
              f"median {np.median(last):.0f}, (A/eps)^h* = {(A / args.eps) ** h_star:.0f}")


if __name__ == "__main__":
    main()
