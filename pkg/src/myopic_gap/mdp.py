"""Finite-horizon tabular MDPs and exact dynamic programming.

Array conventions used throughout the package (steps are 0-indexed):

* transitions ``P``            shape ``(H, S, A, S)``
* reward supports / probs      shape ``(H, S, A, K)``
* Q-tables and occupancies     shape ``(H, S, A)``
* stochastic policies          shape ``(H, S, A)``, rows sum to one
* state values                 shape ``(H + 1, S)`` with ``V[H] == 0``
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

PROB_TOL = 1e-12
BUDGET_TOL = 1e-12

STANDARD = "standard"
RELAXED = "relaxed"


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Episodic MDP ``(X, A, H, P, R)`` with finitely supported reward distributions.

    ``init_dist`` is optional; when omitted every episode starts in ``x_init``.
    Instances are immutable (the arrays are made read-only).
    """

    P: np.ndarray
    reward_support: np.ndarray
    reward_probs: np.ndarray
    x_init: int = 0
    init_dist: np.ndarray | None = None
    mode: str = STANDARD
    _mean: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = _frozen(self.P)
        sup = _frozen(self.reward_support)
        prb = _frozen(self.reward_probs)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"P must have shape (H, S, A, S), got {P.shape}")
        if sup.shape != prb.shape or sup.shape[:3] != P.shape[:3]:
            raise ValueError(
                f"reward arrays must have shape {P.shape[:3]} + (K,), "
                f"got {sup.shape} and {prb.shape}"
            )
        if self.mode not in (STANDARD, RELAXED):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        S = P.shape[1]
        if not 0 <= int(self.x_init) < S:
            raise ValueError(f"x_init={self.x_init} out of range for S={S}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "reward_support", sup)
        object.__setattr__(self, "reward_probs", prb)
        object.__setattr__(self, "x_init", int(self.x_init))
        if self.init_dist is not None:
            d0 = _frozen(self.init_dist)
            if d0.shape != (S,):
                raise ValueError(f"init_dist must have shape ({S},)")
            object.__setattr__(self, "init_dist", d0)
        object.__setattr__(self, "_mean", _frozen((sup * prb).sum(axis=-1)))

    @classmethod
    def deterministic(cls, P, rewards, x_init=0, init_dist=None, mode=STANDARD):
        """Build an MDP whose rewards are the constants ``rewards[h, x, a]``."""
        r = np.asarray(rewards, dtype=float)
        return cls(P, r[..., None], np.ones_like(r)[..., None], x_init, init_dist, mode)

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def mean_reward(self) -> np.ndarray:
        return self._mean

    @property
    def start_dist(self) -> np.ndarray:
        if self.init_dist is not None:
            return self.init_dist
        d0 = np.zeros(self.S)
        d0[self.x_init] = 1.0
        return d0

    def reward_range(self) -> tuple[float, float]:
        live = self.reward_probs > 0
        vals = self.reward_support[live]
        return float(vals.min()), float(vals.max())

    def with_rewards(self, support, probs, mode=None) -> "TabularMDP":
        return TabularMDP(self.P, support, probs, self.x_init, self.init_dist,
                          self.mode if mode is None else mode)


class ValidationReport(NamedTuple):
    ok: bool
    violations: list
    budget: float


def max_episode_reward(M: TabularMDP) -> float:
    """Largest cumulative reward any trajectory can collect (max-support backward DP)."""
    live = M.reward_probs > 0
    rmax = np.where(live, M.reward_support, -np.inf).max(axis=-1)
    W = np.zeros(M.S)
    reach = M.P > 0
    for h in reversed(range(M.H)):
        nxt = np.where(reach[h], W[None, None, :], -np.inf).max(axis=-1)
        W = (rmax[h] + nxt).max(axis=-1)
    starts = M.start_dist > 0
    return float(W[starts].max())


def validate(M: TabularMDP) -> ValidationReport:
    """Check every MDP invariant; returns all violations rather than raising."""
    out = []
    if np.any(M.P < 0):
        for h, x, a, y in zip(*np.nonzero(M.P < 0)):
            out.append(f"negative transition P[{h}][{x}][{a}][{y}]={M.P[h, x, a, y]!r}")
    rows = M.P.sum(axis=-1)
    for h, x, a in zip(*np.nonzero(np.abs(rows - 1.0) > PROB_TOL)):
        out.append(f"transition row P[{h}][{x}][{a}]: row sum {rows[h, x, a]:.12g}")
    if np.any(M.reward_probs < 0):
        for h, x, a, k in zip(*np.nonzero(M.reward_probs < 0)):
            out.append(f"negative reward probability R[{h}][{x}][{a}][{k}]")
    rsum = M.reward_probs.sum(axis=-1)
    for h, x, a in zip(*np.nonzero(np.abs(rsum - 1.0) > PROB_TOL)):
        out.append(f"reward distribution R[{h}][{x}][{a}]: probability sum {rsum[h, x, a]:.12g}")
    if M.init_dist is not None:
        d0 = M.init_dist
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_TOL:
            out.append(f"initial distribution sums to {d0.sum():.12g}")
    live = M.reward_probs > 0
    vals = M.reward_support
    if not np.all(np.isfinite(vals[live])):
        out.append("non-finite reward support value")
    budget = float("nan")
    if M.mode == STANDARD:
        for h, x, a, k in zip(*np.nonzero(live & (vals < 0))):
            out.append(f"negative reward {vals[h, x, a, k]!r} at R[{h}][{x}][{a}]")
        if not out:
            budget = max_episode_reward(M)
            if budget > 1.0 + BUDGET_TOL:
                out.append(f"episode budget exceeded: W_1(x_init) = {budget:.15g} > 1")
    else:
        for h, x, a, k in zip(*np.nonzero(live & (np.abs(vals) > 1.0))):
            out.append(f"relaxed reward {vals[h, x, a, k]!r} outside [-1, 1] at R[{h}][{x}][{a}]")
    return ValidationReport(not out, out, budget)


# ---------------------------------------------------------------------------
# policies as arrays


def check_policy(pi: np.ndarray, M: TabularMDP | None = None, tol: float = PROB_TOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 3:
        raise ValueError(f"policy must have shape (H, S, A), got {pi.shape}")
    if M is not None and pi.shape != (M.H, M.S, M.A):
        raise ValueError(f"policy shape {pi.shape} does not match MDP {(M.H, M.S, M.A)}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > tol):
        raise ValueError("policy rows must be nonnegative and sum to one")
    return pi


def deterministic_policy(actions, A: int) -> np.ndarray:
    """One-hot ``(H, S, A)`` policy from an ``(H, S)`` integer action table."""
    actions = np.asarray(actions, dtype=np.intp)
    return np.eye(A)[actions]


def uniform_policy(M: TabularMDP) -> np.ndarray:
    return np.full((M.H, M.S, M.A), 1.0 / M.A)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Episode:
    """One sampled trajectory; ``states`` has length H + 1."""

    states: tuple
    actions: tuple
    rewards: tuple
    seed: int | None

    @property
    def transitions(self):
        s, a, r = self.states, self.actions, self.rewards
        return [(h, s[h], a[h], r[h], s[h + 1]) for h in range(len(a))]

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))


def _draw(p: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(np.cumsum(p), u, side="right"))
    if i >= len(p) or p[i] == 0:
        # u landed above a cumulative sum that rounded below one
        i = int(np.flatnonzero(p > 0)[-1])
    return i


def uniforms_per_episode(H: int) -> int:
    """Number of uniforms one episode consumes: the start state plus three per step."""
    return 1 + 3 * H


def episode_from_uniforms(M: TabularMDP, pi: np.ndarray, u, seed=None) -> Episode:
    """Inverse-CDF episode driven by ``u``: ``u[0]`` picks the start, then (action, reward, next) per step."""
    x = _draw(M.start_dist, u[0])
    states, actions, rewards = [x], [], []
    for h in range(M.H):
        base = 1 + 3 * h
        a = _draw(pi[h, x], u[base])
        k = _draw(M.reward_probs[h, x, a], u[base + 1])
        y = _draw(M.P[h, x, a], u[base + 2])
        actions.append(a)
        rewards.append(float(M.reward_support[h, x, a, k]))
        states.append(y)
        x = y
    return Episode(tuple(states), tuple(actions), tuple(rewards), seed)


def sample_episode(M: TabularMDP, pi: np.ndarray, seed) -> Episode:
    """Sample one episode; identical ``(M, pi, seed)`` always gives the same episode."""
    u = np.random.default_rng(seed).random(uniforms_per_episode(M.H))
    return episode_from_uniforms(M, pi, u, None if seed is None else int(seed))


def sample_batch(M: TabularMDP, pi: np.ndarray, rng: np.random.Generator, n: int):
    """Vectorised sampling of ``n`` episodes; returns (states (n, H+1), actions (n, H), returns (n,))."""
    states = np.empty((n, M.H + 1), dtype=np.intp)
    actions = np.empty((n, M.H), dtype=np.intp)
    ret = np.zeros(n)
    def draw_rows(probs):
        c = np.cumsum(probs, axis=-1)
        u = rng.random(len(probs))[:, None]
        j = (u >= c).sum(axis=-1)
        return np.minimum(j, probs.shape[-1] - 1)

    states[:, 0] = draw_rows(np.broadcast_to(M.start_dist, (n, M.S)))
    for h in range(M.H):
        x = states[:, h]
        a = draw_rows(pi[h, x])
        k = draw_rows(M.reward_probs[h, x, a])
        ret += M.reward_support[h, x, a, k]
        states[:, h + 1] = draw_rows(M.P[h, x, a])
        actions[:, h] = a
    return states, actions, ret


# ---------------------------------------------------------------------------
# exact dynamic programming


def occupancy(M: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Exact occupancy measure ``mu[h, x, a] = P_pi(x_h = x, a_h = a)`` by forward recursion."""
    mu = np.empty((M.H, M.S, M.A))
    d = M.start_dist
    for h in range(M.H):
        mu[h] = d[:, None] * pi[h]
        d = np.einsum("xa,xay->y", mu[h], M.P[h])
    return mu


class PolicyValue(NamedTuple):
    Q: np.ndarray
    V: np.ndarray
    value: float


def policy_value(M: TabularMDP, pi: np.ndarray) -> PolicyValue:
    Q = np.empty((M.H, M.S, M.A))
    V = np.zeros((M.H + 1, M.S))
    for h in reversed(range(M.H)):
        Q[h] = M.mean_reward[h] + M.P[h] @ V[h + 1]
        V[h] = (pi[h] * Q[h]).sum(axis=-1)
    return PolicyValue(Q, V, float(M.start_dist @ V[0]))


class OptimalValues(NamedTuple):
    Q: np.ndarray
    V: np.ndarray
    policy: np.ndarray
    value: float


def optimal_values(M: TabularMDP) -> OptimalValues:
    """Backward value iteration; the returned policy breaks ties toward the lowest action."""
    Q = np.empty((M.H, M.S, M.A))
    V = np.zeros((M.H + 1, M.S))
    for h in reversed(range(M.H)):
        Q[h] = M.mean_reward[h] + M.P[h] @ V[h + 1]
        V[h] = Q[h].max(axis=-1)
    pi = deterministic_policy(Q.argmax(axis=-1), M.A)
    return OptimalValues(Q, V, pi, float(M.start_dist @ V[0]))


def bellman_apply(M: TabularMDP, f_next: np.ndarray | None, h: int) -> np.ndarray:
    """``(T_h f_{h+1})(x, a)``; pass ``None`` (or zeros) for the step after the last."""
    if not 0 <= h < M.H:
        raise ValueError(f"step {h} out of range for H={M.H}")
    if f_next is None:
        return M.mean_reward[h].copy()
    return M.mean_reward[h] + M.P[h] @ np.asarray(f_next).max(axis=-1)


def bellman_residual(M: TabularMDP, f: np.ndarray) -> np.ndarray:
    """Residual table ``f_h - T_h f_{h+1}`` for every step (square it for the squared error)."""
    f = np.asarray(f, dtype=float)
    E = np.empty_like(f)
    for h in range(M.H):
        nxt = f[h + 1] if h + 1 < M.H else None
        E[h] = f[h] - bellman_apply(M, nxt, h)
    return E


def residual_expectations(M: TabularMDP, f: np.ndarray, pi: np.ndarray):
    """Per-step ``E_pi[E_h f]`` and ``E_pi[E_h^2 f]`` under the occupancy of ``pi``."""
    E = bellman_residual(M, f)
    mu = occupancy(M, pi)
    return (mu * E).sum(axis=(1, 2)), (mu * E**2).sum(axis=(1, 2))


# ---------------------------------------------------------------------------
# serialisation


def to_dict(M: TabularMDP) -> dict:
    R = []
    for h in range(M.H):
        layer = []
        for x in range(M.S):
            row = []
            for a in range(M.A):
                keep = M.reward_probs[h, x, a] > 0
                row.append({
                    "support": M.reward_support[h, x, a][keep].tolist(),
                    "probs": M.reward_probs[h, x, a][keep].tolist(),
                })
            layer.append(row)
        R.append(layer)
    doc = {
        "S": M.S, "A": M.A, "H": M.H, "x_init": M.x_init,
        "P": M.P.tolist(), "R": R, "mode": M.mode,
    }
    if M.init_dist is not None:
        doc["init_dist"] = M.init_dist.tolist()
    return doc


def from_dict(doc: dict) -> TabularMDP:
    H, S, A = int(doc["H"]), int(doc["S"]), int(doc["A"])
    P = np.asarray(doc["P"], dtype=float).reshape(H, S, A, S)
    K = max(len(c["support"]) for layer in doc["R"] for row in layer for c in row)
    sup = np.zeros((H, S, A, K))
    prb = np.zeros((H, S, A, K))
    for h, layer in enumerate(doc["R"]):
        for x, row in enumerate(layer):
            for a, cell in enumerate(row):
                n = len(cell["support"])
                if len(cell["probs"]) != n:
                    raise ValueError(f"R[{h}][{x}][{a}]: support/probs length mismatch")
                sup[h, x, a, :n] = cell["support"]
                prb[h, x, a, :n] = cell["probs"]
    return TabularMDP(P, sup, prb, doc.get("x_init", 0), doc.get("init_dist"),
                      doc.get("mode", STANDARD))


def dumps(M: TabularMDP, **kw) -> str:
    # json writes floats with repr, i.e. the shortest string that round-trips (<= 17 digits)
    return json.dumps(to_dict(M), **kw)


def loads(text: str) -> TabularMDP:
    return from_dict(json.loads(text))


def content_hash(M: TabularMDP) -> str:
    return hashlib.sha256(dumps(M, sort_keys=True).encode()).hexdigest()
