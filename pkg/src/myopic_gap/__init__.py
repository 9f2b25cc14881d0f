"""Tabular laboratory for myopic exploration: exact gaps, fitted-Q learning and benchmark MDPs."""
from __future__ import annotations

from .mdp import (
    Episode,
    TabularMDP,
    bellman_apply,
    bellman_residual,
    content_hash,
    occupancy,
    optimal_values,
    policy_value,
    sample_episode,
    validate,
)
from .policies import ExplorationMapping, eps_greedy, greedy, softmax

__all__ = [
    "Episode",
    "ExplorationMapping",
    "TabularMDP",
    "bellman_apply",
    "bellman_residual",
    "content_hash",
    "eps_greedy",
    "greedy",
    "occupancy",
    "optimal_values",
    "policy_value",
    "sample_episode",
    "softmax",
    "validate",
]
__version__ = "0.1.0"
