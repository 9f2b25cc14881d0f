"""Hypothesis strategies for small random MDPs and Q-tables."""
from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from myopic_gap.envs import random_mdp


@st.composite
def small_mdps(draw, max_S=3, max_A=2, max_H=3, deterministic=None):
    S = draw(st.integers(1, max_S))
    A = draw(st.integers(1, max_A))
    H = draw(st.integers(1, max_H))
    seed = draw(st.integers(0, 2**32 - 1))
    det = draw(st.booleans()) if deterministic is None else deterministic
    sparsity = draw(st.sampled_from([0.0, 0.5]))
    return random_mdp(S, A, H, seed, deterministic=det, sparsity=sparsity)


def random_policy(M, rng):
    return rng.dirichlet(np.ones(M.A), size=(M.H, M.S))


def random_q(M, rng):
    return rng.random((M.H, M.S, M.A))
