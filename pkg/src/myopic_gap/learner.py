"""Fitted-Q iteration with myopic exploration on tabular MDPs.

For the full tabular class the least-squares fit at step ``h`` is the per-pair mean of the
targets ``r + max_a' f_{h+1}(x', a')`` clipped into the value range, so the learner keeps
per-pair sufficient statistics and refits incrementally: after each episode only the
visited pairs and their upstream predecessors are recomputed.
"""
from __future__ import annotations

import bisect
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Callable

import numpy as np

from .mdp import (
    Episode,
    TabularMDP,
    content_hash,
    optimal_values,
    policy_value,
    uniforms_per_episode,
)
from .policies import ExplorationMapping, greedy_actions

DEFAULT_RULES = ("range_max", "range_min")
SEEDING = ("none", "one_sample_per_pair")


@dataclass
class LearnerConfig:
    """Settings for one run of the learner.

    ``default_value`` is a constant or ``"range_max"`` / ``"range_min"`` and fills pairs with
    no data.  ``seed_reward_overrides`` maps ``(h, x, a)`` to the reward recorded by the seeding
    sample, which is how adversarial initial datasets are built.
    """

    exploration: ExplorationMapping = field(default_factory=ExplorationMapping)
    episodes: int = 100
    seed: int = 0
    default_value: float | str = 0.0
    dataset_seeding: str = "none"
    seeding_seed: int | None = None
    seed_reward_overrides: dict = field(default_factory=dict)
    value_range: tuple | None = None
    keep_tables: bool = False
    perturbation: Callable | None = None

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be nonnegative")
        if self.dataset_seeding not in SEEDING:
            raise ValueError(f"dataset_seeding must be one of {SEEDING}")
        if isinstance(self.default_value, str) and self.default_value not in DEFAULT_RULES:
            raise ValueError(f"default_value must be a number or one of {DEFAULT_RULES}")

    def ranges(self, H: int) -> np.ndarray:
        if self.value_range is None:
            vr = np.tile([0.0, 1.0], (H, 1))
        else:
            vr = np.asarray(self.value_range, dtype=float)
            if vr.shape == (2,):
                vr = np.tile(vr, (H, 1))
        if vr.shape != (H, 2) or np.any(vr[:, 0] > vr[:, 1]):
            raise ValueError(f"value_range must be a (lo, hi) pair or have shape ({H}, 2)")
        return vr

    def defaults(self, H: int) -> np.ndarray:
        vr = self.ranges(H)
        if self.default_value == "range_max":
            return vr[:, 1].copy()
        if self.default_value == "range_min":
            return vr[:, 0].copy()
        v = float(self.default_value)
        if np.any(v < vr[:, 0]) or np.any(v > vr[:, 1]):
            raise ValueError(f"default value {v} lies outside the value range")
        return np.full(H, v)

    def to_dict(self) -> dict:
        return {
            "exploration": self.exploration.to_config(),
            "episodes": self.episodes,
            "seed": self.seed,
            "default_value": self.default_value,
            "dataset_seeding": self.dataset_seeding,
            "seeding_seed": self.seeding_seed,
            "seed_reward_overrides": [[*k, v] for k, v in sorted(self.seed_reward_overrides.items())],
            "value_range": None if self.value_range is None else np.asarray(self.value_range).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        d = dict(d)
        if "exploration" in d or "explore" in d:
            d["exploration"] = ExplorationMapping.from_config(d.pop("exploration", None) or d.pop("explore"))
        if "seed_reward_overrides" in d:
            d["seed_reward_overrides"] = {tuple(int(i) for i in e[:3]): float(e[3])
                                          for e in d["seed_reward_overrides"]}
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ---------------------------------------------------------------------------
# datasets


class TransitionDataset:
    """Per-step multisets ``D_h`` of ``(x, a, r, x')`` with count tensors kept in sync."""

    def __init__(self, H: int, S: int, A: int):
        self.H, self.S, self.A = H, S, A
        self.tuples = [[] for _ in range(H)]
        self.N = np.zeros((H, S, A), dtype=np.int64)
        self.Rsum = np.zeros((H, S, A))
        self.Nnext = np.zeros((H, S, A, S), dtype=np.int64)

    def add(self, h: int, x: int, a: int, r: float, y: int) -> None:
        if not (0 <= h < self.H and 0 <= x < self.S and 0 <= a < self.A and 0 <= y < self.S):
            raise IndexError(f"transition {(h, x, a, r, y)} out of range")
        self.tuples[h].append((x, a, float(r), y))
        self.N[h, x, a] += 1
        self.Rsum[h, x, a] += r
        self.Nnext[h, x, a, y] += 1

    def add_episode(self, ep: Episode) -> None:
        for h, x, a, r, y in ep.transitions:
            self.add(h, x, a, r, y)

    def __len__(self) -> int:
        return sum(len(t) for t in self.tuples)


def _clip(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def fit_q(D: TransitionDataset, cfg: LearnerConfig) -> np.ndarray:
    """Least-squares fit over the tabular class: clipped per-pair target means, backward in ``h``."""
    H, S, A = D.H, D.S, D.A
    vr = cfg.ranges(H)
    dflt = cfg.defaults(H)
    f = np.empty((H, S, A))
    v_next = np.zeros(S)
    for h in reversed(range(H)):
        seen = D.N[h] > 0
        # successors are added in ascending order so the incremental refit matches bit for bit
        tot = D.Rsum[h].copy()
        for x, a, y in zip(*np.nonzero(D.Nnext[h])):
            tot[x, a] += D.Nnext[h, x, a, y] * v_next[y]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = tot / D.N[h]
        f[h] = np.where(seen, np.clip(mean, vr[h, 0], vr[h, 1]), dflt[h])
        if cfg.perturbation is not None:
            f[h] = np.clip(f[h] + cfg.perturbation(h, f[h]), vr[h, 0], vr[h, 1])
        v_next = f[h].max(axis=-1)
    return f


def squared_loss(D: TransitionDataset, f: np.ndarray, h: int) -> float:
    """Empirical loss ``L_h`` of ``f_h`` against targets built from ``f_{h+1}``."""
    nxt = f[h + 1].max(axis=-1) if h + 1 < D.H else np.zeros(D.S)
    return float(sum((f[h, x, a] - r - nxt[y]) ** 2 for x, a, r, y in D.tuples[h]))


def seed_dataset(M: TabularMDP, cfg: LearnerConfig) -> TransitionDataset:
    """Initial dataset: empty, or one sampled transition from every ``(h, x, a)``."""
    D = TransitionDataset(M.H, M.S, M.A)
    if cfg.dataset_seeding == "none":
        return D
    rng = np.random.default_rng(cfg.seed if cfg.seeding_seed is None else cfg.seeding_seed)
    u = rng.random((M.H, M.S, M.A, 2))
    for h in range(M.H):
        for x in range(M.S):
            for a in range(M.A):
                k = _inv_cdf(M.reward_probs[h, x, a], u[h, x, a, 0])
                r = float(M.reward_support[h, x, a, k])
                r = cfg.seed_reward_overrides.get((h, x, a), r)
                D.add(h, x, a, r, _inv_cdf(M.P[h, x, a], u[h, x, a, 1]))
    return D


def _inv_cdf(p, u) -> int:
    i = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return i if i < len(p) else int(np.flatnonzero(np.asarray(p) > 0)[-1])


# ---------------------------------------------------------------------------
# the learning loop


class _Sampler:
    """Inverse-CDF sampling on plain Python lists (same convention as ``episode_from_uniforms``)."""

    def __init__(self, M: TabularMDP):
        def cum(p):
            c = list(accumulate(p.tolist()))
            last = int(np.flatnonzero(p > 0)[-1])
            return c, last

        self.P = [[[cum(M.P[h, x, a]) for a in range(M.A)] for x in range(M.S)] for h in range(M.H)]
        self.R = [[[cum(M.reward_probs[h, x, a]) for a in range(M.A)] for x in range(M.S)] for h in range(M.H)]
        self.sup = M.reward_support.tolist()
        self.start = cum(M.start_dist)

    @staticmethod
    def draw(c, u) -> int:
        i = bisect.bisect_right(c[0], u)
        return i if i < len(c[0]) else c[1]


def _phi_row_cum(phi: ExplorationMapping, g: int, A: int, frow=None):
    if phi.kind == "eps_greedy":
        lo = phi.eps / A
        row = [lo] * A
        row[g] = 1.0 - phi.eps + lo
    elif phi.kind == "none":
        row = [0.0] * A
        row[g] = 1.0
    else:
        z = phi.beta * (np.asarray(frow) - np.max(frow))
        w = np.exp(z)
        row = (w / w.sum()).tolist()
    c = list(accumulate(row))
    last = max(i for i, p in enumerate(row) if p > 0)
    return c, last


@dataclass
class RunLog:
    """Per-episode record of one run; all values are exact DP evaluations."""

    config: dict
    env_hash: str
    optimal_value: float
    greedy_values: np.ndarray
    explore_values: np.ndarray
    returns: np.ndarray
    episode_seeds: np.ndarray
    f_hashes: list
    greedy_tables: np.ndarray
    final_q: np.ndarray
    tables: list | None = None

    def __len__(self) -> int:
        return len(self.returns)

    @property
    def subopt_gaps(self) -> np.ndarray:
        return self.optimal_value - self.greedy_values

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "greedy_value", "explore_value", "realized_return", "subopt_gap"])
        for t in range(len(self)):
            w.writerow([t + 1, repr(float(self.greedy_values[t])), repr(float(self.explore_values[t])),
                        repr(float(self.returns[t])), repr(float(self.subopt_gaps[t]))])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config,
            "env_hash": self.env_hash,
            "optimal_value": self.optimal_value,
            "episodes": len(self),
            "final_q": self.final_q.tolist(),
        }

    def write(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv())
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.sidecar(), fh, indent=1, sort_keys=True)


def episode_uniforms(seed: int, T: int, H: int) -> np.ndarray:
    """The ``(T, 1 + 3H)`` uniform stream driving a run; row ``t`` drives episode ``t``."""
    return np.random.default_rng(seed).random((T, uniforms_per_episode(H)))


def _qhash(f: np.ndarray) -> str:
    return hashlib.blake2b(f.tobytes(), digest_size=8).hexdigest()


def run_myopic_rl(M: TabularMDP, cfg: LearnerConfig, dataset: TransitionDataset | None = None) -> RunLog:
    """Fit, explore with ``phi(f_t)``, append the episode, repeat ``cfg.episodes`` times.

    Episode ``t`` is driven by row ``t`` of :func:`episode_uniforms` (``cfg.seed``), so the
    run is a deterministic function of ``(M, cfg)``.
    """
    H, S, A, T = M.H, M.S, M.A, cfg.episodes
    phi = cfg.exploration
    D = seed_dataset(M, cfg) if dataset is None else dataset
    vr = cfg.ranges(H).tolist()
    f = fit_q(D, cfg)
    fl = f.tolist()
    V = [[max(row) for row in fl[h]] for h in range(H)] + [[0.0] * S]
    G = greedy_actions(f)
    Gl = G.tolist()
    # sufficient statistics as dicts so that the refit touches only affected pairs
    cnt = [dict() for _ in range(H)]
    rsum = [dict() for _ in range(H)]
    succ = [dict() for _ in range(H)]
    pred = [[set() for _ in range(S)] for _ in range(H)]
    for h in range(H):
        for x, a, r, y in D.tuples[h]:
            _record(cnt[h], rsum[h], succ[h], pred[h], x, a, r, y)

    sampler = _Sampler(M)
    U = episode_uniforms(cfg.seed, T, H).tolist()
    v_star = optimal_values(M).value
    cache: dict = {}
    gv = np.empty(T)
    ev = np.empty(T)
    ret = np.empty(T)
    hashes = []
    gtabs = np.empty((T, H, S), dtype=np.int16 if A < 2**15 else np.int64)
    tables = [] if cfg.keep_tables else None
    key = G.tobytes()
    qh = _qhash(f)
    perturb = cfg.perturbation is not None

    for t in range(T):
        if phi.kind == "softmax":
            piv = phi(f)
            g_val = cache.get(key)
            if g_val is None:
                g_val = cache[key] = policy_value(M, np.eye(A)[G]).value
            e_val = policy_value(M, piv).value
        else:
            vals = cache.get(key)
            if vals is None:
                vals = cache[key] = (policy_value(M, np.eye(A)[G]).value,
                                     policy_value(M, phi.from_greedy(G, A)).value)
            g_val, e_val = vals
        gv[t], ev[t] = g_val, e_val
        gtabs[t] = G
        hashes.append(qh)
        if tables is not None:
            tables.append(f.copy())

        # sample one episode from phi(f_t)
        u = U[t]
        x = _Sampler.draw(sampler.start, u[0])
        traj = []
        total = 0.0
        for h in range(H):
            b = 1 + 3 * h
            a = _Sampler.draw(_phi_row_cum(phi, Gl[h][x], A, fl[h][x]), u[b])
            k = _Sampler.draw(sampler.R[h][x][a], u[b + 1])
            r = sampler.sup[h][x][a][k]
            y = _Sampler.draw(sampler.P[h][x][a], u[b + 2])
            traj.append((h, x, a, r, y))
            total += r
            x = y
        ret[t] = total

        for h, x, a, r, y in traj:
            D.add(h, x, a, r, y)
            _record(cnt[h], rsum[h], succ[h], pred[h], x, a, r, y)

        if perturb:
            f = fit_q(D, cfg)
            fl = f.tolist()
            V = [[max(row) for row in fl[h]] for h in range(H)] + [[0.0] * S]
            G = greedy_actions(f)
            Gl = G.tolist()
            key, qh = G.tobytes(), _qhash(f)
            continue

        # incremental refit, backward over steps
        f_changed = g_changed = False
        dirty: set = set()
        for h in range(H - 1, -1, -1):
            rows = {(traj[h][1], traj[h][2])}
            for y in dirty:
                rows |= pred[h][y]
            lo, hi = vr[h]
            vn = V[h + 1]
            fh = fl[h]
            touched = set()
            for xa in rows:
                s = rsum[h][xa]
                for y, c in sorted(succ[h][xa].items()):
                    s += c * vn[y]
                val = _clip(s / cnt[h][xa], lo, hi)
                xx, aa = xa
                if val != fh[xx][aa]:
                    fh[xx][aa] = val
                    f[h, xx, aa] = val
                    touched.add(xx)
            dirty = set()
            for xx in touched:
                row = fh[xx]
                m = max(row)
                gi = row.index(m)
                if gi != Gl[h][xx]:
                    Gl[h][xx] = gi
                    G[h, xx] = gi
                    g_changed = True
                if m != V[h][xx]:
                    V[h][xx] = m
                    dirty.add(xx)
            f_changed = f_changed or bool(touched)
        if g_changed:
            key = G.tobytes()
        if f_changed:
            qh = _qhash(f)

    return RunLog(
        config=cfg.to_dict(), env_hash=content_hash(M), optimal_value=v_star,
        greedy_values=gv, explore_values=ev, returns=ret,
        episode_seeds=np.arange(T), f_hashes=hashes, greedy_tables=gtabs,
        final_q=f.copy(), tables=tables,
    )


def _record(cnt, rsum, succ, pred, x, a, r, y):
    xa = (x, a)
    if xa in cnt:
        cnt[xa] += 1
        rsum[xa] += r
        s = succ[xa]
        s[y] = s.get(y, 0) + 1
    else:
        cnt[xa] = 1
        rsum[xa] = r
        succ[xa] = {y: 1}
    pred[y].add(xa)


def suboptimality_census(log: RunLog, M: TabularMDP, lam: float):
    """Number (and indices) of episodes whose greedy policy is more than ``lam`` below optimal."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if content_hash(M) != log.env_hash:
        raise ValueError("run log was produced on a different environment")
    idx = np.flatnonzero(log.subopt_gaps > lam)
    return int(len(idx)), idx
