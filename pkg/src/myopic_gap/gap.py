"""Exact myopic exploration gaps, exploration radii and the closed-form bounds around them.

The gap of a Q-table ``f`` is

    alpha(f) = max over candidates pi' of  (V^{pi'} - V^{pi^f}) / sqrt(c(pi'))

where ``c(pi')`` is the smallest ``c >= 1`` with ``mu^{pi'} <= c mu^{phi(f)}`` and
``mu^{pi^f} <= c mu^{phi(f)}`` pointwise (occupancy form), or the same inequalities for
expected squared Bellman residuals of a family of test functions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .mdp import (
    TabularMDP,
    bellman_apply,
    bellman_residual,
    deterministic_policy,
    occupancy,
    optimal_values,
    policy_value,
    sample_batch,
    uniform_policy,
)
from .policies import ExplorationMapping, greedy_actions

EXHAUSTIVE_CAP = 2**24
TABLE_CAP = 2**20
CHUNK_ELEMS = 1 << 22
TIE_TOL = 1e-12

EXHAUSTIVE = "exhaustive"
CERTIFIED = "certified_lower_bound"


class CandidateOverflow(ValueError):
    """Raised when exhaustive enumeration would exceed the candidate cap."""


# ---------------------------------------------------------------------------
# ratio conventions


def ratio_max(num: np.ndarray, den: np.ndarray, axis=None):
    """``max num / den`` with ``0/0 = 0`` and ``positive/0 = inf``."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num > 0, np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf), 0.0)
    return r.max(axis=axis)


def min_radius(mu_explore, mu_greedy, mu_candidate) -> float:
    """Smallest ``c >= 1`` with both occupancy constraints satisfied (``inf`` if none exists)."""
    return float(max(1.0, ratio_max(mu_candidate, mu_explore), ratio_max(mu_greedy, mu_explore)))


# ---------------------------------------------------------------------------
# candidate policies


def reachable_points(M: TabularMDP) -> list:
    """Decision points ``(h, x)`` with positive probability under the uniform policy."""
    d = occupancy(M, uniform_policy(M)).sum(axis=-1)
    return [(int(h), int(x)) for h, x in zip(*np.nonzero(d > 0))]


def evaluate_deterministic(M: TabularMDP, act: np.ndarray):
    """State occupancies ``(N, H, S)`` and values ``(N,)`` of a batch of action tables ``(N, H, S)``."""
    act = np.asarray(act, dtype=np.intp)
    N = act.shape[0]
    xs = np.arange(M.S)
    d = np.broadcast_to(M.start_dist, (N, M.S)).copy()
    D = np.empty((N, M.H, M.S))
    V = np.zeros(N)
    for h in range(M.H):
        D[:, h] = d
        V += (d * M.mean_reward[h][xs, act[:, h]]).sum(axis=1)
        if h + 1 < M.H:
            d = np.einsum("nx,nxy->ny", d, M.P[h][xs, act[:, h]])
    return D, V


class CandidateSet:
    """A finite set of deterministic candidate policies, evaluated once and reused across ``f``.

    Exhaustive sets enumerate every action assignment to the reachable decision points in
    lexicographic order (first point most significant; unreachable points use action 0).
    """

    def __init__(self, M: TabularMDP, mode: str, points=None, actions=None, cap: int = EXHAUSTIVE_CAP):
        self.M = M
        self.mode = mode
        if mode == EXHAUSTIVE:
            self.points = list(reachable_points(M) if points is None else points)
            n = len(self.points)
            if n * math.log2(M.A) > math.log2(cap) + 1e-9:
                raise CandidateOverflow(
                    f"{M.A}^{n} candidates exceed the cap of {cap}; use certified mode with an explicit list"
                )
            self.size = M.A**n
            self._explicit = None
        elif mode == CERTIFIED:
            acts = np.asarray(actions, dtype=np.intp)
            if acts.ndim != 3 or acts.shape[1:] != (M.H, M.S):
                raise ValueError(f"candidate actions must have shape (N, {M.H}, {M.S})")
            self.points = None
            self.size = len(acts)
            self._explicit = acts
        else:
            raise ValueError(f"unknown search mode {mode!r}")
        self._cache = None

    @classmethod
    def exhaustive(cls, M: TabularMDP, cap: int = EXHAUSTIVE_CAP) -> "CandidateSet":
        return cls(M, EXHAUSTIVE, cap=cap)

    @classmethod
    def from_policies(cls, M: TabularMDP, policies) -> "CandidateSet":
        """Certified set from one-hot policies ``(H, S, A)`` or action tables ``(H, S)``."""
        tables = []
        for p in policies:
            p = np.asarray(p)
            tables.append(p.argmax(axis=-1) if p.ndim == 3 else p)
        return cls(M, CERTIFIED, actions=np.stack(tables) if tables else np.zeros((0, M.H, M.S)))

    def __len__(self) -> int:
        return self.size

    @property
    def chunk_size(self) -> int:
        return max(1, CHUNK_ELEMS // (self.M.H * self.M.S * max(self.M.S, 4)))

    def actions(self, start: int, stop: int) -> np.ndarray:
        if self._explicit is not None:
            return self._explicit[start:stop]
        M = self.M
        idx = np.arange(start, stop, dtype=np.int64)
        n = len(self.points)
        act = np.zeros((len(idx), M.H, M.S), dtype=np.intp)
        for j, (h, x) in enumerate(self.points):
            act[:, h, x] = (idx // M.A ** (n - 1 - j)) % M.A
        return act

    def chunks(self):
        """Yield ``(offset, actions, state_occupancies, values)``; cached when a single chunk suffices."""
        if self._cache is not None:
            yield from self._cache
            return
        out = []
        step = self.chunk_size
        for start in range(0, self.size, step):
            act = self.actions(start, min(start + step, self.size))
            D, V = evaluate_deterministic(self.M, act)
            item = (start, act, D, V)
            if self.size <= step:
                out.append(item)
            yield item
        if self.size <= step:
            self._cache = out


def k_edit_candidates(M: TabularMDP, base_actions, k: int, extra=()) -> CandidateSet:
    """Certified set: ``extra`` policies, the base policy, and every edit of at most ``k`` steps.

    An edit at step ``h`` replaces the base action by a fixed action at every state of that
    step, which for deterministic dynamics changes exactly the visited decision.
    """
    base = np.asarray(base_actions, dtype=np.intp)
    tables = [np.asarray(e, dtype=np.intp) for e in extra] + [base]
    for j in range(1, k + 1):
        for steps in itertools.combinations(range(M.H), j):
            for acts in itertools.product(range(M.A), repeat=j):
                t = base.copy()
                for h, a in zip(steps, acts):
                    t[h, :] = a
                tables.append(t)
    uniq = np.unique(np.stack(tables), axis=0)
    return CandidateSet(M, CERTIFIED, actions=uniq)


def certified_candidates(M: TabularMDP, f, k: int = 1) -> CandidateSet:
    """``pi*``, ``pi^f`` and all k-step edits of ``pi^f``."""
    star = optimal_values(M).policy.argmax(axis=-1)
    return k_edit_candidates(M, greedy_actions(f), k, extra=[star])


def greedy_representatives(M: TabularMDP, cap: int = EXHAUSTIVE_CAP):
    """One one-hot Q-table per deterministic policy on the reachable decision points."""
    cs = CandidateSet.exhaustive(M, cap)
    eye = np.eye(M.A)
    for _, act, _, _ in cs.chunks():
        for t in act:
            yield eye[t]


# ---------------------------------------------------------------------------
# gap reports


@dataclass
class GapReport:
    alpha: float
    achieving_actions: np.ndarray
    radius_c: float
    delta: float
    greedy_value: float
    optimal_value: float
    search_mode: str
    n_candidates: int
    num_actions: int
    candidate_gaps: np.ndarray | None = None
    candidate_c: np.ndarray | None = None
    bounds: dict = field(default_factory=dict)

    @property
    def achieving_policy(self) -> np.ndarray:
        return np.eye(self.num_actions)[self.achieving_actions]

    def to_dict(self) -> dict:
        def fin(v):
            return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "schema_version": 1,
            "alpha": self.alpha,
            "radius_c": fin(self.radius_c),
            "delta": self.delta,
            "greedy_value": self.greedy_value,
            "optimal_value": self.optimal_value,
            "search_mode": self.search_mode,
            "n_candidates": self.n_candidates,
            "achieving_actions": self.achieving_actions.tolist(),
            "bounds": {k: fin(v) for k, v in self.bounds.items()},
        }


def _select(best, scores, cs, acts, offset):
    """Merge a chunk into the running tie set ``best = (score, [(c, key, actions, gap)])``."""
    finite = np.isfinite(scores)
    if not finite.any():
        return best
    top = scores[finite].max()
    cur = best[0] if best is not None else -np.inf
    if top < cur - TIE_TOL:
        return best
    new_top = max(top, cur)
    keep = np.flatnonzero(finite & (scores >= new_top - TIE_TOL))
    entries = [(float(cs[0][i]), acts[i].ravel().tolist(), acts[i], float(cs[1][i])) for i in keep]
    if best is not None and cur >= new_top - TIE_TOL:
        entries = best[1] + entries
    return (new_top, entries)


def _finish(best):
    cmin = min(e[0] for e in best[1])
    pool = [e for e in best[1] if e[0] <= cmin * (1 + TIE_TOL)]
    return min(pool, key=lambda e: e[1])


def _greedy_eval(M, f):
    g = greedy_actions(f)
    D, V = evaluate_deterministic(M, g[None])
    return g, D[0], float(V[0])


def _run_gap(M, f, phi, candidates, radius_fn, keep_table):
    """Shared search loop; ``radius_fn(act, D)`` returns per-candidate radii before the clamp."""
    n = len(candidates)
    g, _, v_f = _greedy_eval(M, f)
    v_star = optimal_values(M).value
    gaps_all = np.empty(n) if keep_table and n <= TABLE_CAP else None
    c_all = np.empty(n) if gaps_all is not None else None
    best = None
    for off, act, D, V in candidates.chunks():
        gaps = V - v_f
        c = np.maximum(1.0, radius_fn(act, D))
        with np.errstate(invalid="ignore"):
            scores = np.where(np.isfinite(c), gaps / np.sqrt(c), np.nan)
        if gaps_all is not None:
            gaps_all[off:off + len(V)] = gaps
            c_all[off:off + len(V)] = c
        best = _select(best, np.where(np.isnan(scores), -np.inf, scores), (c, gaps), act, off)
    if best is None:
        # no candidate with a finite radius: the gap is zero by convention
        alpha, c_best, a_best = 0.0, np.inf, g
    else:
        c_best, _, a_best, gap_best = _finish(best)
        alpha = max(0.0, best[0])
        if best[0] < 0:
            c_best = np.inf
    rep = GapReport(
        alpha=float(alpha), achieving_actions=np.asarray(a_best), radius_c=float(c_best),
        delta=v_star - v_f, greedy_value=v_f, optimal_value=v_star,
        search_mode=candidates.mode, n_candidates=n, num_actions=M.A,
        candidate_gaps=gaps_all, candidate_c=c_all,
    )
    return rep


def myopic_gap_tabular(M: TabularMDP, f, phi: ExplorationMapping, candidates: CandidateSet | None = None,
                       keep_table: bool = True, with_bounds: bool = True) -> GapReport:
    """Occupancy-form gap: constraints ``mu^{pi'} <= c mu^{phi(f)}`` and ``mu^{pi^f} <= c mu^{phi(f)}``."""
    f = np.asarray(f, dtype=float)
    cands = CandidateSet.exhaustive(M) if candidates is None else candidates
    mu_phi = occupancy(M, phi(f))
    mu_f = occupancy(M, deterministic_policy(greedy_actions(f), M.A))
    c_f = ratio_max(mu_f, mu_phi)
    hh = np.arange(M.H)[None, :, None]
    xx = np.arange(M.S)[None, None, :]

    def radius(act, D):
        den = mu_phi[hh, xx, act]
        return np.maximum(ratio_max(D.reshape(len(D), -1), den.reshape(len(D), -1), axis=1), c_f)

    rep = _run_gap(M, f, phi, cands, radius, keep_table)
    if with_bounds:
        rep.bounds = report_bounds_for(M, f, phi, rep.delta)
    return rep


def indicator_test_functions(M: TabularMDP) -> list:
    """One Q-table per ``(h, x, a)`` whose Bellman residual is 1 at that pair and 0 elsewhere."""
    fs = []
    for h in range(M.H):
        later = np.zeros((M.H, M.S, M.A))
        for j in reversed(range(h + 1, M.H)):
            later[j] = bellman_apply(M, later[j + 1] if j + 1 < M.H else None, j)
        base_h = bellman_apply(M, later[h + 1] if h + 1 < M.H else None, h)
        for x in range(M.S):
            for a in range(M.A):
                g = later.copy()
                g[h] = base_h
                g[h, x, a] += 1.0
                for j in reversed(range(h)):
                    g[j] = bellman_apply(M, g[j + 1], j)
                fs.append(g)
    return fs


def myopic_gap_testfns(M: TabularMDP, f, phi: ExplorationMapping, candidates: CandidateSet | None,
                       test_functions: Iterable, keep_table: bool = True) -> GapReport:
    """Constraint-family form over the supplied test functions (a finite surrogate for all of F)."""
    f = np.asarray(f, dtype=float)
    cands = CandidateSet.exhaustive(M) if candidates is None else candidates
    E2 = np.array([bellman_residual(M, np.asarray(g, float)) ** 2 for g in test_functions])
    if len(E2) == 0:
        def radius(act, D):
            return np.ones(len(D))
    else:
        mu_phi = occupancy(M, phi(f))
        mu_f = occupancy(M, deterministic_policy(greedy_actions(f), M.A))
        e_phi = np.einsum("hxa,khxa->kh", mu_phi, E2)
        e_f = np.einsum("hxa,khxa->kh", mu_f, E2)
        c_f = ratio_max(e_f, e_phi)
        hh = np.arange(M.H)[None, :, None]
        xx = np.arange(M.S)[None, None, :]

        def radius(act, D):
            out = np.empty(len(D))
            step = max(1, CHUNK_ELEMS // (len(E2) * M.H * M.S))
            for s in range(0, len(D), step):
                a = act[s:s + step]
                sel = E2[:, hh, xx, a]  # (K, n, H, S)
                e_c = np.einsum("nhx,knhx->nkh", D[s:s + step], sel)
                out[s:s + step] = ratio_max(e_c.reshape(len(a), -1),
                                            np.broadcast_to(e_phi.ravel(), (len(a), e_phi.size)), axis=1)
            return np.maximum(out, c_f)

    rep = _run_gap(M, f, phi, cands, radius, keep_table)
    rep.bounds = report_bounds_for(M, f, phi, rep.delta)
    return rep


class ClassGap(NamedTuple):
    alpha: float
    radius_c: float
    members: int
    argmin: int | None


def gap_over_class(M: TabularMDP, f_enumeration, phi: ExplorationMapping, lam: float = 0.0,
                   candidates: CandidateSet | None = None) -> ClassGap:
    """``inf alpha`` and ``sup c`` over the enumerated ``f`` whose greedy gap exceeds ``lam``."""
    cands = CandidateSet.exhaustive(M) if candidates is None else candidates
    v_star = optimal_values(M).value
    alpha, c, members, arg = np.inf, 1.0, 0, None
    for i, f in enumerate(f_enumeration):
        f = np.asarray(f, dtype=float)
        _, _, v_f = _greedy_eval(M, f)
        if not v_star - v_f > lam:
            continue
        members += 1
        rep = myopic_gap_tabular(M, f, phi, cands, keep_table=False, with_bounds=False)
        if rep.alpha < alpha:
            alpha, arg = rep.alpha, i
        c = max(c, rep.radius_c)
    return ClassGap(alpha, c, members, arg)


# ---------------------------------------------------------------------------
# likelihood ratios and closed-form bounds


def likelihood_ratio_sup(M: TabularMDP, pi_target, pi_base) -> float:
    """``max`` over feasible trajectories of ``prod_h pi_target(a_h|x_h) / pi_base(a_h|x_h)``.

    The dynamics cancel in trajectory likelihood ratios, so a backward DP over reachable
    ``(h, x)`` suffices.  Returns ``inf`` if the target uses an action the base never takes.
    """
    pt = np.asarray(pi_target, float)
    pb = np.asarray(pi_base, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(pt > 0, np.where(pb > 0, pt / np.where(pb > 0, pb, 1.0), np.inf), -np.inf)
    return _ratio_dp(M, step, pt)


def worst_case_ratio(M: TabularMDP, pi_base) -> float:
    """Likelihood-ratio sup maximised over every deterministic target policy."""
    pb = np.asarray(pi_base, float)
    with np.errstate(divide="ignore"):
        step = np.where(pb > 0, 1.0 / np.where(pb > 0, pb, 1.0), np.inf)
    return _ratio_dp(M, step, np.ones_like(pb))


def _ratio_dp(M, step, pt):
    # only trajectories the target can generate count: actions with pt > 0, next states with P > 0
    reach = M.P > 0
    W = np.ones(M.S)
    for h in reversed(range(M.H)):
        nxt = np.where(reach[h], W[None, None, :], -np.inf).max(axis=-1)
        cand = np.where(pt[h] > 0, step[h] * nxt, -np.inf)
        cand = np.where(np.isnan(cand), np.inf, cand)
        W = cand.max(axis=-1)
    starts = M.start_dist > 0
    return float(W[starts].max())


def bound_lemma51(ratio: float, delta: float) -> float:
    return 0.0 if not np.isfinite(ratio) else delta / math.sqrt(ratio)


def closed_form_bounds(delta: float, eps: float | None, A: int, H: int, B: int | None = None,
                       delta_P: float | None = None, beta: float | None = None) -> dict:
    """Lower bounds on the gap from the worst-case, action-variation, bandit, breadcrumb and softmax results."""
    out = {}
    if eps is not None:
        out["worst_case"] = (eps / A) ** (H / 2) * delta
        out["bandit"] = math.sqrt(eps / A) * delta
        if delta_P is not None:
            out["action_variation"] = (0.0 if not np.isfinite(delta_P)
                                       else math.sqrt(eps / (A * delta_P**H)) * delta)
        if B is not None:
            out["breadcrumb"] = (eps / A) ** (B / 2) / (2 * H)
    if beta is not None:
        out["softmax"] = (A * math.exp(beta)) ** (-H / 2) * delta
    return out


def report_bounds_for(M: TabularMDP, f, phi: ExplorationMapping, delta: float) -> dict:
    """Every bound applicable to ``(M, phi)``; the bandit bound only when ``delta_P == 1``."""
    pol = phi(np.asarray(f, float))
    ratio = worst_case_ratio(M, pol)
    out = {"likelihood_ratio": bound_lemma51(ratio, delta), "trajectory_ratio": ratio}
    av = action_variation(M)
    if phi.kind == "eps_greedy":
        cf = closed_form_bounds(delta, phi.eps, M.A, M.H, delta_P=av.delta_P)
        out["worst_case"] = cf["worst_case"]
        out["action_variation"] = cf["action_variation"]
        if av.delta_P == 1.0:
            out["bandit"] = cf["bandit"]
    elif phi.kind == "softmax":
        out.update(closed_form_bounds(delta, None, M.A, M.H, beta=phi.beta))
    return out


class ActionVariationReport(NamedTuple):
    delta_P: float
    witness: tuple | None  # (h, x, a, a', x')


def action_variation(M: TabularMDP) -> ActionVariationReport:
    """``max P_h(x'|x,a) / P_h(x'|x,a')`` with 0/0 skipped and positive/0 = inf."""
    num = M.P[:, :, :, None, :]  # (H, S, A, 1, S)
    den = M.P[:, :, None, :, :]  # (H, S, 1, A, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(num > 0, np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf), 1.0)
    r = np.broadcast_to(r, (M.H, M.S, M.A, M.A, M.S))
    idx = np.unravel_index(int(np.argmax(r)), r.shape)
    val = float(r[idx])
    return ActionVariationReport(max(1.0, val), tuple(int(i) for i in idx) if val > 1.0 else None)


# ---------------------------------------------------------------------------
# covering length


class CoveringReport(NamedTuple):
    empirical_L: int | None  # None: some pair has zero occupancy, so full coverage never happens
    empirical_L_reachable: int | None  # median over the reachable pairs only
    p_min: float
    p_min_reachable: float
    analytic_lower: float
    uncovered_pairs: list
    exhausted_trials: int
    trials: int


def covering_length(M: TabularMDP, pi, trials: int, budget: int, seed) -> CoveringReport:
    """Episodes until every ``(h, x, a)`` with positive occupancy has been visited (median over trials)."""
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    mu = occupancy(M, pi)
    target = mu > 0
    p_min = float(mu.min())
    p_reach = float(mu[target].min())
    missing = [tuple(int(i) for i in t) for t in zip(*np.nonzero(~target))]
    need = np.full(trials, int(target.sum()))
    seen = np.zeros((trials, M.H, M.S, M.A), dtype=bool)
    L = np.full(trials, -1)
    live = np.arange(trials)
    hs = np.arange(M.H)
    for t in range(1, budget + 1):
        if len(live) == 0:
            break
        states, actions, _ = sample_batch(M, pi, rng, len(live))
        for h in hs:
            seen[live, h, states[:, h], actions[:, h]] = True
        done = seen[live].reshape(len(live), -1).sum(axis=1) >= need[live]
        L[live[done]] = t
        live = live[~done]
    exhausted = int((L < 0).sum())
    Ls = np.where(L < 0, budget + 1, L)
    med = int(np.sort(Ls)[(trials - 1) // 2])
    med_reach = None if med > budget else med
    lower = math.log(2) / -math.log1p(-p_min) if p_min > 0 else math.inf
    return CoveringReport(med_reach if p_min > 0 else None, med_reach, p_min, p_reach,
                          lower, missing, exhausted, trials)


# ---------------------------------------------------------------------------
# regret decomposition


def regret_decomp_check(M: TabularMDP, f, pi_prime):
    """``V^{pi'} - V^{pi^f}`` against ``sum_h E_{pi^f}[E_h f] - sum_h E_{pi'}[E_h f]``."""
    f = np.asarray(f, float)
    pf = deterministic_policy(greedy_actions(f), M.A)
    E = bellman_residual(M, f)
    lhs = policy_value(M, pi_prime).value - policy_value(M, pf).value
    rhs = float((occupancy(M, pf) * E).sum() - (occupancy(M, pi_prime) * E).sum())
    return lhs, rhs
