"""Greedy policies and myopic exploration mappings over Q-tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def greedy_actions(f: np.ndarray) -> np.ndarray:
    """``(H, S)`` table of greedy actions; ``argmax`` already picks the lowest index on ties."""
    return np.asarray(f).argmax(axis=-1)


def greedy(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    return np.eye(f.shape[-1])[greedy_actions(f)]


def eps_greedy(f: np.ndarray, eps: float) -> np.ndarray:
    """``(1 - eps) * onehot(greedy) + eps / A`` per state."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    f = np.asarray(f)
    A = f.shape[-1]
    return (1.0 - eps) * greedy(f) + eps / A


def softmax(f: np.ndarray, beta: float) -> np.ndarray:
    if not (np.isfinite(beta) and beta >= 0):
        raise ValueError(f"beta must be finite and nonnegative, got {beta}")
    z = beta * np.asarray(f, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ExplorationMapping:
    """The map ``phi`` from a Q-table to the policy used for data collection.

    ``kind`` is ``"eps_greedy"``, ``"softmax"`` or ``"none"`` (pure greedy).
    """

    kind: str = "eps_greedy"
    eps: float = 0.1
    beta: float = 0.0

    def __post_init__(self):
        if self.kind == "eps_greedy":
            if not 0.0 < self.eps <= 1.0:
                raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        elif self.kind == "softmax":
            if not (np.isfinite(self.beta) and self.beta >= 0):
                raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        elif self.kind != "none":
            raise ValueError(f"unknown exploration kind {self.kind!r}")

    def __call__(self, f: np.ndarray) -> np.ndarray:
        if self.kind == "eps_greedy":
            return eps_greedy(f, self.eps)
        if self.kind == "softmax":
            return softmax(f, self.beta)
        return greedy(f)

    def from_greedy(self, actions: np.ndarray, A: int) -> np.ndarray:
        """Exploration policy given only the greedy action table (not defined for softmax)."""
        one_hot = np.eye(A)[actions]
        if self.kind == "eps_greedy":
            return (1.0 - self.eps) * one_hot + self.eps / A
        if self.kind == "none":
            return one_hot
        raise ValueError("softmax exploration depends on the full Q-table")

    @property
    def policy_level(self) -> bool:
        """True when ``phi(f)`` depends on ``f`` only through its greedy policy."""
        return self.kind != "softmax"

    def to_config(self) -> dict:
        if self.kind == "eps_greedy":
            return {"kind": "eps_greedy", "eps": self.eps}
        if self.kind == "softmax":
            return {"kind": "softmax", "beta": self.beta}
        return {"kind": "none"}

    @classmethod
    def from_config(cls, cfg: dict) -> "ExplorationMapping":
        kind = cfg.get("kind", "eps_greedy")
        if kind == "eps_greedy":
            return cls(kind, eps=float(cfg["eps"]))
        if kind == "softmax":
            return cls(kind, eps=0.0, beta=float(cfg["beta"]))
        return cls("none", eps=0.0)
