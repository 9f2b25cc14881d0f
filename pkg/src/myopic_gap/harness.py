"""Experiment driver: environments by name, repeated learner runs, regret accounting and sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path

import numpy as np

from . import envs
from .gap import CandidateSet, certified_candidates, myopic_gap_tabular
from .learner import LearnerConfig, RunLog, run_myopic_rl, suboptimality_census
from .mdp import TabularMDP, content_hash, from_dict, optimal_values
from .policies import ExplorationMapping

SCHEMA_VERSION = 1
THREADS_ENV = "MYOPIC_GAP_THREADS"

ENV_NAMES = ("tree", "grid", "chain", "bandit", "random", "file")


# ---------------------------------------------------------------------------
# environments


def make_env(spec: dict) -> TabularMDP:
    """Build an environment from ``{"name": ..., **params}``."""
    p = dict(spec)
    name = p.pop("name", None)
    if name == "tree":
        return envs.tree_mdp(int(p.get("H", 3)), p.get("variant", "goal"), p.get("path_actions")).mdp
    if name == "grid":
        if "width" in p:
            gs = envs.GridSpec(int(p["width"]), int(p["height"]), tuple(p["start"]), tuple(p["goal"]),
                               p.get("variant", "sparse"), int(p.get("B", 2)),
                               tuple(tuple(c) for c in p.get("trail", ())))
        else:
            gs = envs.canonical_grid(p.get("variant", "helpful"))
        return envs.grid_world(gs).mdp
    if name == "chain":
        return envs.chain_mdp(chain_spec(p))
    if name == "bandit":
        means = np.asarray(p.get("means", [[0.49, 0.5]]), dtype=float)
        if means.ndim == 1:
            means = means[None]
        return envs.contextual_bandit(means.shape[0], means.shape[1], int(p.get("H", 1)), means,
                                      p.get("context_probs"))
    if name == "random":
        rng = np.random.default_rng(p.get("seed", 0))
        return envs.random_mdp(int(p.get("S", 3)), int(p.get("A", 2)), int(p.get("H", 3)), rng,
                               deterministic=bool(p.get("deterministic", False)))
    if name == "file":
        with open(p["path"]) as fh:
            return from_dict(json.load(fh))
    raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")


def chain_spec(p: dict) -> envs.ChainSpec:
    return envs.ChainSpec(int(p["H"]), int(p.get("A", 2)), float(p.get("eps", 0.5)),
                          h_star=p.get("h_star"), v=p.get("v"), copies=int(p.get("copies", 1)),
                          strict=bool(p.get("strict", False)))


def epsilon_schedule(T: int, H: int, A: int, d: float = 1.0, h: int = 1, C: float = 1.0) -> float:
    """Default ``eps = C (h H A^h d / T)^{1/(2+h)}``, clipped into ``(0, 1]``."""
    if T <= 0:
        raise ValueError("T must be positive")
    return float(min(1.0, C * (h * H * A**h * d / T) ** (1.0 / (2 + h))))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """An environment, a learner template, seeds and census thresholds.

    ``adversarial`` applies the chain's adversarial seeding (one sample per pair with the
    informative reward replaced by zero).  ``eps_schedule`` (``{"h":.., "d":.., "C":..}``)
    overrides the exploration rate with :func:`epsilon_schedule`.
    """

    env: dict
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seeds: list = field(default_factory=lambda: [0])
    lambdas: list = field(default_factory=lambda: [0.0])
    output_dir: str | None = None
    adversarial: bool = False
    eps_schedule: dict | None = None

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ValueError("lambda values must lie in [0, 1]")

    @property
    def repetitions(self) -> int:
        return len(self.seeds)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "env": self.env, "learner": self.learner.to_dict(),
                "seeds": self.seeds, "lambdas": list(self.lambdas), "output_dir": self.output_dir,
                "adversarial": self.adversarial, "eps_schedule": self.eps_schedule}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        learner = dict(d.get("learner", {}))
        if "explore" in d and "exploration" not in learner and "explore" not in learner:
            learner["exploration"] = d["explore"]
        seeds = d.get("seeds")
        if seeds is None:
            seeds = list(range(int(d.get("repetitions", 1))))
        return cls(env=d["env"], learner=LearnerConfig.from_dict(learner), seeds=seeds,
                   lambdas=list(d.get("lambdas", [0.0])), output_dir=d.get("output_dir"),
                   adversarial=bool(d.get("adversarial", False)), eps_schedule=d.get("eps_schedule"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def learner_for(cfg: ExperimentConfig, M: TabularMDP, seed: int) -> LearnerConfig:
    base = cfg.learner.to_dict()
    base["seed"] = seed
    lc = LearnerConfig.from_dict(base)
    if cfg.eps_schedule is not None:
        sch = cfg.eps_schedule
        eps = epsilon_schedule(max(lc.episodes, 1), M.H, M.A, float(sch.get("d", 1.0)),
                               int(sch.get("h", 1)), float(sch.get("C", 1.0)))
        lc.exploration = ExplorationMapping("eps_greedy", eps)
    if cfg.adversarial:
        if cfg.env.get("name") != "chain":
            raise ValueError("adversarial seeding is defined for the chain environment")
        lc.dataset_seeding = "one_sample_per_pair"
        lc.seed_reward_overrides = envs.chain_adversarial_seed(chain_spec(
            {k: v for k, v in cfg.env.items() if k != "name"}))
    return lc


# ---------------------------------------------------------------------------
# regret accounting


@dataclass
class RegretReport:
    """Cumulative regret split into greedy and exploration terms, plus census counts."""

    seed: int
    cumulative: np.ndarray
    greedy_term: np.ndarray
    exploration_term: np.ndarray
    census: dict
    episodes_to_optimal: int | None
    last_suboptimal: dict

    @classmethod
    def from_log(cls, log: RunLog, M: TabularMDP, seed: int, lambdas) -> "RegretReport":
        greedy = log.optimal_value - log.greedy_values
        explore = log.greedy_values - log.explore_values
        g, e = np.cumsum(greedy), np.cumsum(explore)
        census, last = {}, {}
        for lam in lambdas:
            n, idx = suboptimality_census(log, M, lam)
            census[float(lam)] = n
            last[float(lam)] = int(idx[-1]) + 1 if n else 0
        return cls(seed, g + e, g, e, census, _episodes_to_optimal(log), last)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "regret", "greedy_term", "exploration_term"])
        for t in range(len(self.cumulative)):
            w.writerow([t + 1, repr(float(self.cumulative[t])), repr(float(self.greedy_term[t])),
                        repr(float(self.exploration_term[t]))])
        return buf.getvalue()

    def summary(self) -> dict:
        fin = lambda a: float(a[-1]) if len(a) else 0.0  # noqa: E731
        return {"seed": self.seed, "regret": fin(self.cumulative), "greedy_term": fin(self.greedy_term),
                "exploration_term": fin(self.exploration_term),
                "census": {repr(k): v for k, v in self.census.items()},
                "last_suboptimal": {repr(k): v for k, v in self.last_suboptimal.items()},
                "episodes_to_optimal": self.episodes_to_optimal}


def _episodes_to_optimal(log: RunLog, tol: float = 1e-12) -> int | None:
    """First episode (1-based) from which the greedy policy stays optimal; None if never."""
    bad = np.flatnonzero(log.subopt_gaps > tol)
    T = len(log)
    if T == 0 or (bad.size and bad[-1] == T - 1):
        return None
    return int(bad[-1]) + 2 if bad.size else 1


# ---------------------------------------------------------------------------
# running


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    env_hash: str
    optimal_value: float
    logs: list
    reports: list

    def summary(self) -> dict:
        eto = [r.episodes_to_optimal for r in self.reports]
        reached = sorted(e for e in eto if e is not None)
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "env_hash": self.env_hash,
            "optimal_value": self.optimal_value,
            "runs": [r.summary() for r in self.reports],
            "optimal_within_T": len(reached),
            "not_optimal_within_T": len(eto) - len(reached),
            "median_episodes_to_optimal": (None if len(reached) * 2 <= len(eto) or not eto
                                           else int(np.median([e if e is not None else math.inf
                                                               for e in eto]))),
        }


def workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _one_run(args):
    M, lc = args
    return run_myopic_rl(M, lc)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every seed, build the regret reports and (optionally) write artifacts."""
    M = make_env(cfg.env)
    jobs = [(M, learner_for(cfg, M, s)) for s in cfg.seeds]
    n = min(workers(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            logs = list(ex.map(_one_run, jobs))
    else:
        logs = [_one_run(j) for j in jobs]
    reports = [RegretReport.from_log(log, M, s, cfg.lambdas) for log, s in zip(logs, cfg.seeds)]
    res = ExperimentResult(cfg, content_hash(M), optimal_values(M).value, logs, reports)
    if write and cfg.output_dir is not None:
        write_artifacts(res, cfg.output_dir)
    return res


def write_artifacts(res: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for log, rep in zip(res.logs, res.reports):
        log.write(out / f"run_seed{rep.seed}.csv", out / f"run_seed{rep.seed}.json")
        (out / f"regret_seed{rep.seed}.csv").write_text(rep.to_csv())
    with open(out / "summary.json", "w") as fh:
        json.dump(res.summary(), fh, indent=1, sort_keys=True)
    return out


# ---------------------------------------------------------------------------
# batched runner for one-step bandits


def _supports_batched(M: TabularMDP, lc: LearnerConfig) -> bool:
    return (M.H == 1 and lc.exploration.kind == "eps_greedy" and lc.dataset_seeding == "none"
            and lc.perturbation is None)


def _cum_table(p: np.ndarray) -> np.ndarray:
    """Row-wise running sums computed like ``itertools.accumulate`` (sequential float adds)."""
    flat = p.reshape(-1, p.shape[-1])
    return np.array([list(accumulate(r.tolist())) for r in flat]).reshape(p.shape)


def _bisect_rows(cum: np.ndarray, last: np.ndarray, u: np.ndarray) -> np.ndarray:
    i = (cum <= u[:, None]).sum(axis=1)
    return np.where(i < cum.shape[1], i, last)


def batched_bandit_regret(M: TabularMDP, lc: LearnerConfig, eps_values, seeds, T: int,
                          checkpoints=None, lambdas=(), block: int = 4096) -> dict:
    """Run the learner on a one-step MDP for every ``(eps, seed)`` pair at once.

    Draws, fits and greedy choices follow :func:`run_myopic_rl` step for step (same uniform
    stream per seed), so the per-episode values agree with it up to floating-point rounding
    in the exact value evaluation.  Only cumulative sums at ``checkpoints`` are returned.
    """
    if M.H != 1:
        raise ValueError("batched runner needs H = 1")
    eps_values = np.asarray(eps_values, dtype=float)
    seeds = [int(s) for s in seeds]
    if np.any(eps_values <= 0) or np.any(eps_values > 1):
        raise ValueError("eps values must lie in (0, 1]")
    checkpoints = np.asarray(sorted(checkpoints) if checkpoints is not None else [T], dtype=int)
    if checkpoints.size and (checkpoints[0] < 1 or checkpoints[-1] > T):
        raise ValueError("checkpoints must lie in [1, T]")
    S, A = M.S, M.A
    E, n = len(eps_values), len(seeds)
    R = E * n
    eps = np.repeat(eps_values, n)
    seed_of = np.tile(np.arange(n), E)
    lo_hi = lc.ranges(1)[0]
    dflt = lc.defaults(1)[0]
    mean = M.mean_reward[0]
    d0 = M.start_dist
    v_star = optimal_values(M).value
    start_cum = np.array(list(accumulate(d0.tolist())))
    start_last = int(np.flatnonzero(d0 > 0)[-1])
    rcum = _cum_table(M.reward_probs[0])                      # (S, A, K)
    rlast = np.array([[int(np.flatnonzero(M.reward_probs[0, x, a] > 0)[-1]) for a in range(A)]
                      for x in range(S)])
    sup = M.reward_support[0]
    lo = eps / A
    hi = 1.0 - eps + lo

    cnt = np.zeros((R, S, A), dtype=np.int64)
    rsum = np.zeros((R, S, A))
    f = np.full((R, S, A), dflt)
    rows = np.arange(R)
    lam = np.asarray(lambdas, dtype=float)
    g_cum = np.zeros(R)
    e_cum = np.zeros(R)
    c_cum = np.zeros((R, len(lam)), dtype=np.int64)
    out_g = np.zeros((len(checkpoints), R))
    out_e = np.zeros((len(checkpoints), R))
    out_c = np.zeros((len(checkpoints), R, len(lam)), dtype=np.int64)
    rngs = [np.random.default_rng(s) for s in seeds]
    ck = 0
    avg = mean.mean(axis=1)
    for t0 in range(0, T, block):
        m = min(block, T - t0)
        U = np.stack([r.random((m, 4)) for r in rngs])       # (n, m, 4)
        for j in range(m):
            u = U[seed_of, j]
            G = f.argmax(axis=2)                               # (R, S)
            gval = (d0 * mean[np.arange(S), G]).sum(axis=1)
            evals = (d0 * ((1 - eps)[:, None] * mean[np.arange(S), G] + eps[:, None] * avg)).sum(axis=1)
            gap = v_star - gval
            g_cum += gap
            e_cum += gval - evals
            if lam.size:
                c_cum += gap[:, None] > lam[None, :]
            x = np.minimum((start_cum <= u[:, 0:1]).sum(axis=1), S)
            x = np.where(x < S, x, start_last)
            g = G[rows, x]
            # accumulate the eps-greedy row exactly as the sequential sampler does
            c = np.zeros(R)
            a = np.zeros(R, dtype=np.int64)
            for k in range(A):
                c = c + np.where(g == k, hi, lo)
                a += c <= u[:, 1]
            a = np.where(a < A, a, A - 1)
            k = _bisect_rows(rcum[x, a], rlast[x, a], u[:, 2])
            r = sup[x, a, k]
            cnt[rows, x, a] += 1
            rsum[rows, x, a] += r
            f[rows, x, a] = np.clip(rsum[rows, x, a] / cnt[rows, x, a], lo_hi[0], lo_hi[1])
            t = t0 + j + 1
            while ck < len(checkpoints) and checkpoints[ck] == t:
                out_g[ck], out_e[ck], out_c[ck] = g_cum, e_cum, c_cum
                ck += 1
    shape = (len(checkpoints), E, n)
    return {
        "checkpoints": checkpoints,
        "eps": eps_values,
        "seeds": seeds,
        "greedy_term": out_g.reshape(shape),
        "exploration_term": out_e.reshape(shape),
        "regret": (out_g + out_e).reshape(shape),
        "census": {float(l): out_c[:, :, i].reshape(shape) for i, l in enumerate(lam)},
    }


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepTable:
    T: int
    H: int
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        lams = sorted({k for r in self.rows for k in r["census"]})
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "regret", "greedy_term", "exploration_term", "exploration_cap"]
                   + [f"census_{lam!r}" for lam in lams])
        for r in self.rows:
            w.writerow([repr(r["eps"]), repr(r["regret"]), repr(r["greedy_term"]),
                        repr(r["exploration_term"]), repr(r["eps"] * self.H * self.T)]
                       + [repr(r["census"][lam]) for lam in lams])
        return buf.getvalue()

    def best(self) -> dict:
        return min(self.rows, key=lambda r: r["regret"])


def sweep_epsilon(cfg: ExperimentConfig, eps_grid, fast: bool = True) -> SweepTable:
    """One experiment per eps; rows hold seed-averaged final regret terms and census counts."""
    eps_grid = [float(e) for e in eps_grid]
    if any(not 0.0 < e <= 1.0 for e in eps_grid):
        raise ValueError("eps grid must lie in (0, 1]")
    M = make_env(cfg.env)
    T = cfg.learner.episodes
    rows = []
    if fast and T > 0 and _supports_batched(M, cfg.learner) and not cfg.adversarial:
        b = batched_bandit_regret(M, cfg.learner, eps_grid, cfg.seeds, T, [T], cfg.lambdas)
        for i, e in enumerate(eps_grid):
            rows.append({"eps": e, "regret": float(b["regret"][0, i].mean()),
                         "greedy_term": float(b["greedy_term"][0, i].mean()),
                         "exploration_term": float(b["exploration_term"][0, i].mean()),
                         "census": {lam: float(c[0, i].mean()) for lam, c in b["census"].items()}})
        return SweepTable(T, M.H, rows)
    for e in eps_grid:
        sub = ExperimentConfig(cfg.env, LearnerConfig.from_dict(
            {**cfg.learner.to_dict(), "exploration": {"kind": "eps_greedy", "eps": e}}),
            cfg.seeds, cfg.lambdas, None, cfg.adversarial, None)
        res = run_experiment(sub, write=False)
        s = [r.summary() for r in res.reports]
        rows.append({"eps": e,
                     "regret": float(np.mean([x["regret"] for x in s])) if s else 0.0,
                     "greedy_term": float(np.mean([x["greedy_term"] for x in s])) if s else 0.0,
                     "exploration_term": float(np.mean([x["exploration_term"] for x in s])) if s else 0.0,
                     "census": {float(lam): float(np.mean([r.census[float(lam)] for r in res.reports]))
                                if s else 0.0 for lam in cfg.lambdas}})
    return SweepTable(T, M.H, rows)


def regret_exponent(T_values, regrets) -> float:
    """Least-squares slope of ``log regret`` against ``log T``."""
    x = np.log(np.asarray(T_values, float))
    y = np.log(np.asarray(regrets, float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# bounds table


BOUND_COLUMNS = ("alpha", "likelihood_ratio", "worst_case", "action_variation", "bandit")


def report_bounds(M: TabularMDP, f, phi: ExplorationMapping, candidates: CandidateSet | None = None,
                  mode: str = "exhaustive") -> dict:
    """Computed gap next to every applicable closed-form lower bound."""
    if candidates is None and mode != "exhaustive":
        candidates = certified_candidates(M, f)
    rep = myopic_gap_tabular(M, f, phi, candidates, keep_table=False)
    row = {"alpha": rep.alpha, "delta": rep.delta, "search_mode": rep.search_mode}
    for k in BOUND_COLUMNS[1:]:
        row[k] = rep.bounds.get(k)
    if phi.kind == "softmax":
        row["softmax"] = rep.bounds.get("softmax")
    row["trajectory_ratio"] = rep.bounds.get("trajectory_ratio")
    return row
