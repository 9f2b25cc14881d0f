"""Constructors for the benchmark environments.

* a binary tree with goal, path and potential-shaped rewards
* grid worlds with sparse, helpful and distracting breadcrumbs
* the two-chain lower-bound MDP and its multi-copy extension
* contextual bandits and random MDPs (used by property tests)
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mdp import RELAXED, TabularMDP

# ---------------------------------------------------------------------------
# reward shaping


def potential_shape(M: TabularMDP, Phi, tol: float = 1e-12) -> TabularMDP:
    """Shift rewards by ``Phi_h(x) - E[Phi_{h+1}(x')]``; every policy keeps its return.

    ``Phi`` has shape ``(H + 1, S)``; the last row is the terminal potential and must be zero,
    as must ``Phi_1`` on every possible start state.
    """
    Phi = np.asarray(Phi, dtype=float)
    if Phi.shape != (M.H + 1, M.S):
        raise ValueError(f"potential must have shape {(M.H + 1, M.S)}, got {Phi.shape}")
    if np.any(Phi[M.H] != 0):
        raise ValueError("terminal potential Phi_{H+1} must be identically zero")
    if np.any(Phi[0][M.start_dist > 0] != 0):
        raise ValueError("Phi_1 must vanish on the start state(s)")
    shift = np.empty((M.H, M.S, M.A))
    for h in range(M.H):
        shift[h] = Phi[h][:, None] - M.P[h] @ Phi[h + 1]
    sup = M.reward_support + shift[..., None]
    live = M.reward_probs > 0
    if np.any(np.abs(sup[live]) > 1.0 + tol):
        raise ValueError("shaped rewards leave the relaxed range [-1, 1]")
    return M.with_rewards(np.where(live, sup, 0.0), M.reward_probs, mode=RELAXED)


# ---------------------------------------------------------------------------
# binary tree


class TreeInstance(NamedTuple):
    mdp: TabularMDP
    path_states: tuple  # s'_1, ..., s'_{H-1}, s_star
    path_actions: tuple  # a'_1, ..., a'_{H-1}

    @property
    def goal(self) -> int:
        return self.path_states[-1]


TREE_VARIANTS = ("goal", "path", "shaped")


def tree_potential(inst: TreeInstance) -> np.ndarray:
    """``Phi(s) = -1`` on the path states after the root, zero at the terminal step."""
    M = inst.mdp
    Phi = np.zeros((M.H + 1, M.S))
    for h, s in enumerate(inst.path_states):
        if h >= 1:
            Phi[h, s] = -1.0
    return Phi


def tree_mdp(H: int, variant: str = "goal", path_actions=None) -> TreeInstance:
    """Deterministic binary tree with ``2**H - 1`` heap-indexed states and A = 2.

    Action 0 descends to child ``2i + 1`` and action 1 to ``2i + 2``; leaves loop on
    themselves so the final (step-H) action is taken at a leaf.  The default target path
    takes action 1 everywhere, so the all-zero Q-table (greedy action 0) is wrong at every step.
    """
    if not 2 <= H <= 12:
        raise ValueError(f"tree horizon must lie in [2, 12], got {H}")
    if variant not in TREE_VARIANTS:
        raise ValueError(f"unknown tree variant {variant!r}")
    S, A = 2**H - 1, 2
    first_leaf = 2 ** (H - 1) - 1
    acts = tuple([1] * (H - 1) if path_actions is None else (int(a) for a in path_actions))
    if len(acts) != H - 1 or any(a not in (0, 1) for a in acts):
        raise ValueError("path_actions must hold H - 1 binary actions")
    P = np.zeros((H, S, A, S))
    for s in range(S):
        for a in range(A):
            nxt = s if s >= first_leaf else 2 * s + 1 + a
            P[:, s, a, nxt] = 1.0
    states = [0]
    for a in acts:
        states.append(2 * states[-1] + 1 + a)
    goal = states[-1]
    r = np.zeros((H, S, A))
    if variant == "path":
        for h, (s, a) in enumerate(zip(states[:-1], acts)):
            r[h, s, a] = 1.0 / H
    else:
        r[H - 1, goal, :] = 1.0
    inst = TreeInstance(TabularMDP.deterministic(P, r), tuple(states), acts)
    if variant == "shaped":
        inst = inst._replace(mdp=potential_shape(inst.mdp, tree_potential(inst)))
    return inst


# ---------------------------------------------------------------------------
# grid worlds

MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}  # up, down, left, right
GRID_VARIANTS = ("sparse", "helpful", "distracting")
MAX_GRID_STATES = 50_000


def shortest_path(start, goal) -> list:
    """Canonical shortest path: alternate vertical and horizontal moves, vertical first."""
    (r, c), (gr, gc) = start, goal
    cells = [(r, c)]
    vertical = True
    while (r, c) != (gr, gc):
        can_v, can_h = r != gr, c != gc
        if can_v and (vertical or not can_h):
            r += 1 if gr > r else -1
        else:
            c += 1 if gc > c else -1
        vertical = not vertical
        cells.append((r, c))
    return cells


@dataclass(frozen=True)
class GridSpec:
    """Deterministic grid; breadcrumbs pay ``1/(2H)`` on their first visit, the goal pays the rest.

    ``trail`` lists the cells of the distracting trail starting next to ``start``; its last
    cell is the trap where a trail-following agent ends the episode.
    """

    width: int
    height: int
    start: tuple
    goal: tuple
    variant: str = "sparse"
    B: int = 2
    trail: tuple = ()

    def __post_init__(self):
        if self.variant not in GRID_VARIANTS:
            raise ValueError(f"unknown grid variant {self.variant!r}")
        for cell in (self.start, self.goal, *self.trail):
            if not (0 <= cell[0] < self.height and 0 <= cell[1] < self.width):
                raise ValueError(f"cell {cell} outside the {self.height}x{self.width} grid")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if self.B < 1:
            raise ValueError("breadcrumb spacing B must be positive")
        if self.variant == "distracting" and not self.trail:
            raise ValueError("distracting variant needs a trail")

    @property
    def H(self) -> int:
        return abs(self.goal[0] - self.start[0]) + abs(self.goal[1] - self.start[1])

    @property
    def trap(self):
        return self.trail[-1] if self.trail else None

    def breadcrumbs(self) -> list:
        """Cells 1, 1 + B, 1 + 2B, ... steps from the start along the path (helpful) or trail."""
        if self.variant == "helpful":
            path = shortest_path(self.start, self.goal)[1:-1]
        elif self.variant == "distracting":
            path = list(self.trail)
        else:
            return []
        return path[::self.B]


def canonical_grid(variant: str) -> GridSpec:
    """The 4x4, B = 2 instance used in the experiments: start (0, 1), goal (3, 3), H = 5."""
    trail = ((0, 0), (1, 0), (2, 0), (3, 0)) if variant == "distracting" else ()
    return GridSpec(4, 4, (0, 1), (3, 3), variant, 2, trail)


class GridInstance(NamedTuple):
    mdp: TabularMDP
    spec: GridSpec
    crumbs: tuple

    def encode(self, cell, mask: int = 0) -> int:
        return (cell[0] * self.spec.width + cell[1]) * (1 << (len(self.crumbs) + 1)) + mask

    def decode(self, s: int):
        nm = 1 << (len(self.crumbs) + 1)
        c, mask = divmod(s, nm)
        return divmod(c, self.spec.width), mask


def grid_world(spec: GridSpec) -> GridInstance:
    """Grid MDP with the state augmented by a collected-bitmask (bit k: crumb k, top bit: goal)."""
    crumbs = spec.breadcrumbs()
    k = len(crumbs)
    if k > 16:
        raise ValueError(f"{k} breadcrumbs exceed the 16-bit mask width")
    nm = 1 << (k + 1)
    cells = spec.width * spec.height
    S = cells * nm
    if S > MAX_GRID_STATES:
        raise ValueError(f"augmented state count {S} exceeds {MAX_GRID_STATES}")
    H, A = spec.H, 4
    crumb_r = 1.0 / (2 * H)
    goal_r = 1.0 - k * crumb_r
    bit = {cell: 1 << i for i, cell in enumerate(crumbs)}
    gbit = 1 << k
    P1 = np.zeros((S, A, S))
    r1 = np.zeros((S, A))
    for s in range(S):
        c, mask = divmod(s, nm)
        row, col = divmod(c, spec.width)
        for a, (dr, dc) in MOVES.items():
            nr = min(max(row + dr, 0), spec.height - 1)
            nc = min(max(col + dc, 0), spec.width - 1)
            new_mask = mask
            if (nr, nc) in bit and not mask & bit[(nr, nc)]:
                r1[s, a] = crumb_r
                new_mask |= bit[(nr, nc)]
            elif (nr, nc) == spec.goal and not mask & gbit:
                r1[s, a] = goal_r
                new_mask |= gbit
            P1[s, a, (nr * spec.width + nc) * nm + new_mask] = 1.0
    P = np.broadcast_to(P1, (H, S, A, S))
    r = np.broadcast_to(r1, (H, S, A))
    x0 = (spec.start[0] * spec.width + spec.start[1]) * nm
    return GridInstance(TabularMDP.deterministic(P, r, x_init=x0), spec, tuple(crumbs))


# ---------------------------------------------------------------------------
# lower-bound chain


@dataclass(frozen=True)
class ChainSpec:
    """Two-chain MDP tuned for exploration parameter ``eps``; give either ``h_star`` or ``v``."""

    H: int
    A: int
    eps: float
    h_star: int | None = None
    v: float | None = None
    copies: int = 1
    strict: bool = False
    resolved_h_star: int = field(init=False)

    def __post_init__(self):
        if self.A < 2 or self.H < 1 or self.copies < 1:
            raise ValueError("chain needs A >= 2, H >= 1 and at least one copy")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if (self.h_star is None) == (self.v is None):
            raise ValueError("give exactly one of h_star or v")
        if self.h_star is not None:
            hs = int(self.h_star)
        else:
            hs = h_star_from_v(self.v, self.eps, self.A)
        if not 1 <= hs <= self.H:
            if self.strict:
                raise ValueError(f"h* = {hs} infeasible for H = {self.H}")
            clamped = min(max(hs, 1), self.H)
            warnings.warn(f"h* = {hs} clamped to {clamped}", stacklevel=2)
            hs = clamped
        object.__setattr__(self, "resolved_h_star", hs)

    @property
    def implied_v(self) -> float:
        return (self.eps / self.A) ** (self.resolved_h_star / 2) / 4

    @property
    def S(self) -> int:
        return 2 * self.copies


def h_star_from_v(v: float, eps: float, A: int) -> int:
    """``ceil(2 log_{eps/A}(4 v))``, rounded first so exact powers do not ceil up by one ulp."""
    if v <= 0 or eps >= A:
        raise ValueError("need v > 0 and eps < A")
    return math.ceil(round(2 * math.log(4 * v) / math.log(eps / A), 9))


def chain_mdp(spec: ChainSpec) -> TabularMDP:
    """Good/bad chains per copy: state ``2i`` is good, ``2i + 1`` is bad.

    Action 0 stays on the good chain, any other action drops to the bad chain for good.
    Rewards (1-indexed step h): Bernoulli(3/8) at (good, 0, h*); zero on (good, 0, h < h*)
    and after h*; ``1/(8 h*)`` everywhere else.
    """
    n, H, A, hs = spec.copies, spec.H, spec.A, spec.resolved_h_star
    S = 2 * n
    P = np.zeros((H, S, A, S))
    sup = np.zeros((H, S, A, 2))
    prb = np.zeros((H, S, A, 2))
    prb[..., 0] = 1.0
    for i in range(n):
        g, b = 2 * i, 2 * i + 1
        P[:, g, 0, g] = 1.0
        P[:, g, 1:, b] = 1.0
        P[:, b, :, b] = 1.0
        for h in range(H):
            step = h + 1
            if step > hs:
                continue
            sup[h, b, :, 0] = 1.0 / (8 * hs)
            sup[h, g, 1:, 0] = 1.0 / (8 * hs)
            if step == hs:
                sup[h, g, 0] = (0.0, 1.0)
                prb[h, g, 0] = (5 / 8, 3 / 8)
    init = None
    if n > 1:
        init = np.zeros(S)
        init[0::2] = 1.0 / n
    return TabularMDP(P, sup, prb, 0, init)


def chain_value_formula(L, h_star: int) -> float:
    """Value of a deterministic single-copy policy that stays ``L`` steps on the good chain."""
    if L >= h_star:
        return 3 / 8
    return (1 - L / h_star) / 8


def chain_adversarial_seed(spec: ChainSpec) -> dict:
    """Seed overrides placing the zero-reward draw at (good, 0, h*) in every copy."""
    h = spec.resolved_h_star - 1
    return {(h, 2 * i, 0): 0.0 for i in range(spec.copies)}


# ---------------------------------------------------------------------------
# bandits and random instances


def contextual_bandit(num_contexts: int, A: int, H: int, mean_rewards, context_probs=None) -> TabularMDP:
    """Contexts drawn i.i.d. each step regardless of the action; rewards are ``(1/H) Bernoulli(mean)``.

    ``mean_rewards`` has shape ``(num_contexts, A)`` or ``(H, num_contexts, A)`` with entries in
    ``[0, 1]``; the ``1/H`` scale keeps every episode's return at most one.
    """
    m = np.asarray(mean_rewards, dtype=float)
    if m.shape == (num_contexts, A):
        m = np.broadcast_to(m, (H, num_contexts, A))
    if m.shape != (H, num_contexts, A):
        raise ValueError(f"mean_rewards must have shape ({num_contexts}, {A}) or ({H}, {num_contexts}, {A})")
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("mean rewards must lie in [0, 1] (episode budget)")
    q = np.full(num_contexts, 1.0 / num_contexts) if context_probs is None else np.asarray(context_probs, float)
    if q.shape != (num_contexts,) or np.any(q < 0) or abs(q.sum() - 1) > 1e-12:
        raise ValueError("context_probs must be a distribution over contexts")
    P = np.broadcast_to(q, (H, num_contexts, A, num_contexts)).copy()
    sup = np.zeros((H, num_contexts, A, 2))
    sup[..., 1] = 1.0 / H
    prb = np.stack([1 - m, m], axis=-1)
    return TabularMDP(P, sup, prb, int(np.argmax(q)), None if num_contexts == 1 else q)


def random_mdp(S: int, A: int, H: int, rng, deterministic: bool = False,
               stochastic_rewards: bool = True, sparsity: float = 0.0) -> TabularMDP:
    """Random instance obeying the episode budget (per-step rewards at most ``1/H``)."""
    rng = np.random.default_rng(rng)
    if deterministic:
        nxt = rng.integers(S, size=(H, S, A))
        P = np.eye(S)[nxt]
    else:
        P = rng.dirichlet(np.ones(S), size=(H, S, A))
        if sparsity > 0:
            P = P * (rng.random(P.shape) >= sparsity)
            empty = P.sum(axis=-1) == 0
            P[empty, 0] = 1.0
            P /= P.sum(axis=-1, keepdims=True)
    mean = rng.random((H, S, A))
    if stochastic_rewards:
        sup = np.zeros((H, S, A, 2))
        sup[..., 1] = 1.0 / H
        prb = np.stack([1 - mean, mean], axis=-1)
        return TabularMDP(P, sup, prb)
    return TabularMDP.deterministic(P, mean / H)
