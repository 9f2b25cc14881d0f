"""Brute-force Eluder dimensions on tiny classes.

One-hot measures with indicator functions give the textbook answer: every measure is
independent of the others, so the dimension equals the number of measures.  A correlated
class collapses it.
"""
from __future__ import annotations

import numpy as np

from myopic_gap.eluder import EvaluatedClass, deterministic_policies, dim_be, dim_de, full_grid
from myopic_gap.envs import contextual_bandit


def main():
    for m in range(1, 7):
        res = dim_de(EvaluatedClass(np.eye(m)), 0.5)
        print(f"one-hot, m={m}: dim {res.dim}, sequence {res.sequence}, eps' {res.eps_prime}")
    corr = EvaluatedClass(np.array([[1.0, 1.0, 1.0], [0.6, 0.6, 0.6]]))
    print(f"identical measures: dim {dim_de(corr, 0.5).dim}")
    M = contextual_bandit(1, 3, 1, [[0.2, 0.5, 0.8]])
    res = dim_be(M, full_grid(1, 1, 3), deterministic_policies(M), 0.5)
    print(f"three-armed bandit, full Q grid: Bellman-Eluder dim {res.dim}")


if __name__ == "__main__":
    main()
