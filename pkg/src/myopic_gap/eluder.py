"""Brute-force distributional Eluder and Bellman-Eluder dimensions on finite classes.

Results on finite grids are lower bounds of the dimension of any larger class.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMDP, bellman_residual, occupancy

DEFAULT_NODE_CAP = 2_000_000
MATRIX_CAP = 10**6


@dataclass
class EvaluatedClass:
    """Matrix ``E[g, m]`` of expectations of function ``g`` under measure ``m``."""

    values: np.ndarray
    function_labels: list = field(default_factory=list)
    measure_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.ndim != 2:
            raise ValueError("expectation matrix must be 2-d (functions x measures)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("expectation matrix has non-finite entries")

    @property
    def n_functions(self) -> int:
        return self.values.shape[0]

    @property
    def n_measures(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_tables(cls, functions, measures) -> "EvaluatedClass":
        """Expectations of tables ``g`` (any shape) under same-shaped measures."""
        G = np.asarray(functions, dtype=float)
        Mu = np.asarray(measures, dtype=float)
        G2 = G.reshape(len(G), -1)
        Mu2 = Mu.reshape(len(Mu), -1)
        if G2.shape[1] != Mu2.shape[1]:
            raise ValueError("function and measure tables have different shapes")
        return cls(G2 @ Mu2.T)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "values": self.values.tolist(),
                "function_labels": list(self.function_labels),
                "measure_labels": list(self.measure_labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatedClass":
        return cls(np.asarray(d["values"], dtype=float), list(d.get("function_labels", [])),
                   list(d.get("measure_labels", [])))


def eps_independent(E: EvaluatedClass, nu_index: int, prefix_indices, eps: float):
    """Return ``(independent, witness)`` where witness is the first qualifying function index."""
    V = E.values
    prefix = list(prefix_indices)
    norms = np.sqrt((V[:, prefix] ** 2).sum(axis=1)) if prefix else np.zeros(E.n_functions)
    ok = (norms <= eps) & (np.abs(V[:, nu_index]) > eps)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return False, None
    return True, int(hits[0])


# Feasible eps' sets are finite unions of half-open intervals [lo, hi).

def _intersect(a, b):
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo < hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _union(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if lo >= hi:
            continue
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


@dataclass
class EluderResult:
    dim: int
    sequence: list
    eps_prime: float | None
    capped: bool
    nodes: int

    @property
    def is_lower_bound(self) -> bool:
        return self.capped

    def to_dict(self) -> dict:
        return {"schema_version": 1, "dim": self.dim, "sequence": self.sequence,
                "eps_prime": self.eps_prime, "capped": self.capped, "nodes": self.nodes}


def dim_de(E: EvaluatedClass, eps: float, node_cap: int = DEFAULT_NODE_CAP,
           allow_repeat: bool = True) -> EluderResult:
    """Longest sequence of measures, each eps'-independent of its predecessors for one eps' >= eps.

    The feasible set of eps' is tracked exactly as a union of intervals, so no
    threshold grid is needed.  Repetition is permitted but never extends a
    sequence: a repeated measure contributes its own ``|E[g]|`` to the prefix
    norm, which then cannot be both ``<= eps'`` and ``< |E[g]|``.
    """
    V = E.values
    m = E.n_measures
    absV = np.abs(V)
    sq = V ** 2
    best = {"len": 0, "seq": [], "set": []}
    nodes = 0
    capped = False
    seen = {}

    def step_set(nu, sqnorm):
        norms = np.sqrt(sqnorm)
        keep = norms < absV[:, nu]
        return _union(zip(norms[keep].tolist(), absV[keep, nu].tolist()))

    def dfs(seq, used, sqnorm, feas):
        nonlocal nodes, capped
        nodes += 1
        if nodes > node_cap:
            capped = True
            return
        if len(seq) > best["len"]:
            best.update(len=len(seq), seq=list(seq), set=feas)
        if len(seq) + (m - len(used)) <= best["len"]:
            return
        key = (used, tuple(feas))
        if key in seen:
            return
        seen[key] = True
        for nu in range(m):
            if nu in used:
                continue
            nxt = _intersect(feas, step_set(nu, sqnorm))
            if not nxt:
                continue
            seq.append(nu)
            dfs(seq, used | {nu}, sqnorm + sq[:, nu], nxt)
            seq.pop()
            if capped:
                return

    if m and E.n_functions:
        dfs([], frozenset(), np.zeros(E.n_functions), [(float(eps), np.inf)])
    eps_prime = best["set"][0][0] if best["set"] else None
    return EluderResult(best["len"], best["seq"], eps_prime, capped, nodes)


def check_sequence(E: EvaluatedClass, seq, eps_prime: float) -> bool:
    """Direct verification that ``seq`` is a valid sequence at threshold ``eps_prime``."""
    return all(eps_independent(E, nu, seq[:i], eps_prime)[0] for i, nu in enumerate(seq))


def full_grid(H: int, S: int, A: int, levels=(-1.0, 0.0, 1.0)) -> np.ndarray:
    """Every table with entries drawn from ``levels``, shape ``(n, H, S, A)``."""
    n_cells = H * S * A
    total = len(levels) ** n_cells
    if total > MATRIX_CAP:
        raise ValueError(f"grid of {total} tables exceeds cap {MATRIX_CAP}")
    prod = np.array(list(itertools.product(levels, repeat=n_cells)), dtype=float)
    return prod.reshape(total, H, S, A)


def deterministic_policies(M: TabularMDP, cap: int = 4096) -> np.ndarray:
    """All deterministic Markov policies as one-hot tables ``(n, H, S, A)``."""
    n = M.A ** (M.H * M.S)
    if n > cap:
        raise ValueError(f"{n} deterministic policies exceed cap {cap}")
    acts = np.array(list(itertools.product(range(M.A), repeat=M.H * M.S)))
    return np.eye(M.A)[acts.reshape(n, M.H, M.S)]


def bellman_eluder_classes(M: TabularMDP, qtable_grid, policy_family) -> list:
    """One EvaluatedClass per step: residuals of the grid against occupancy slices."""
    grid = np.asarray(qtable_grid, dtype=float)
    fam = np.asarray(policy_family, dtype=float)
    if len(grid) * len(fam) * M.H > MATRIX_CAP:
        raise ValueError("grid x family x H exceeds the matrix cap")
    res = np.stack([bellman_residual(M, f) for f in grid])       # (N, H, S, A)
    occ = np.stack([occupancy(M, pi) for pi in fam])             # (K, H, S, A)
    return [EvaluatedClass.from_tables(res[:, h], occ[:, h]) for h in range(M.H)]


def dim_be(M: TabularMDP, qtable_grid, policy_family, eps: float,
           node_cap: int = DEFAULT_NODE_CAP) -> EluderResult:
    """Max over steps of ``dim_de`` of the residual class; returns the maximizing step's result."""
    best = None
    capped = False
    for E in bellman_eluder_classes(M, qtable_grid, policy_family):
        r = dim_de(E, eps, node_cap)
        capped |= r.capped
        if best is None or r.dim > best.dim:
            best = r
    best.capped = capped
    return best
