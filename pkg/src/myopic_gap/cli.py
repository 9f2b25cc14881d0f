"""Command-line entry point: ``myopic-gap <subcommand>``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import eluder as eld
from .gap import CandidateSet, certified_candidates, covering_length, myopic_gap_tabular
from .harness import ExperimentConfig, make_env, report_bounds, run_experiment, sweep_epsilon
from .mdp import deterministic_policy, dumps, from_dict, uniform_policy
from .policies import ExplorationMapping


def _json_arg(text: str):
    """Inline JSON, or a path to a JSON file."""
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text())
    return json.loads(text)


def _add_env_args(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("environment")
    g.add_argument("--env", help="path to an MDP JSON document")
    g.add_argument("--name", choices=["tree", "grid", "chain", "bandit", "random"], required=False)
    g.add_argument("--H", type=int)
    g.add_argument("--S", type=int)
    g.add_argument("--A", type=int)
    g.add_argument("--variant")
    g.add_argument("--h-star", type=int, dest="h_star")
    g.add_argument("--copies", type=int)
    g.add_argument("--env-eps", type=float, dest="env_eps", help="exploration rate the chain is tuned for")
    g.add_argument("--means", type=_json_arg, help="bandit mean rewards (JSON)")
    g.add_argument("--env-seed", type=int, dest="env_seed")


def _env_from_args(args):
    if args.env:
        return from_dict(json.loads(Path(args.env).read_text()))
    if not args.name:
        raise SystemExit("give --env PATH or --name")
    spec = {"name": args.name}
    for key, val in (("H", args.H), ("S", args.S), ("A", args.A), ("variant", args.variant),
                     ("h_star", args.h_star), ("copies", args.copies), ("eps", args.env_eps),
                     ("means", args.means), ("seed", args.env_seed)):
        if val is not None:
            spec[key] = val
    if args.name == "chain" and "H" not in spec:
        spec["H"] = spec.get("h_star", 2)
    return make_env(spec)


def _add_explore_args(p):
    p.add_argument("--explore", type=_json_arg, help='e.g. \'{"kind":"eps_greedy","eps":0.1}\'')
    p.add_argument("--eps", type=float)
    p.add_argument("--beta", type=float)


def _explore_from_args(args) -> ExplorationMapping:
    if args.explore is not None:
        return ExplorationMapping.from_config(args.explore)
    if args.beta is not None:
        return ExplorationMapping("softmax", eps=0.0, beta=args.beta)
    return ExplorationMapping("eps_greedy", args.eps if args.eps is not None else 0.1)


def _q_from_args(args, M):
    if args.q is not None:
        f = np.asarray(args.q, dtype=float)
        if f.shape != (M.H, M.S, M.A):
            raise SystemExit(f"Q-table must have shape {(M.H, M.S, M.A)}, got {f.shape}")
        return f
    if args.greedy is not None:
        return deterministic_policy(np.asarray(args.greedy, dtype=int), M.A)
    return np.zeros((M.H, M.S, M.A))


def _emit(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.output_dir = args.out
    res = run_experiment(cfg)
    s = res.summary()
    print(json.dumps({k: s[k] for k in ("env_hash", "optimal_value", "optimal_within_T",
                                        "not_optimal_within_T", "median_episodes_to_optimal")},
                     sort_keys=True))


def cmd_gap(args):
    M = _env_from_args(args)
    f = _q_from_args(args, M)
    phi = _explore_from_args(args)
    if args.mode == "certified":
        if args.candidates:
            cands = CandidateSet.from_policies(M, np.asarray(_json_arg(args.candidates), dtype=int))
        else:
            cands = certified_candidates(M, f)
    else:
        cands = None
    rep = myopic_gap_tabular(M, f, phi, cands, keep_table=False)
    _emit(rep.to_dict(), args.out)


def cmd_bounds(args):
    M = _env_from_args(args)
    row = report_bounds(M, _q_from_args(args, M), _explore_from_args(args), mode=args.mode)
    _emit({"schema_version": 1, **{k: (v if v is None or np.isfinite(v) else str(v))
                                   if isinstance(v, float) else v for k, v in row.items()}}, args.out)


def cmd_covering(args):
    M = _env_from_args(args)
    if args.policy == "uniform":
        pi = uniform_policy(M)
    else:
        pi = np.asarray(_json_arg(args.policy), dtype=float)
    rep = covering_length(M, pi, args.trials, args.budget, args.seed)
    d = rep._asdict()
    d["analytic_lower"] = d["analytic_lower"] if np.isfinite(d["analytic_lower"]) else "inf"
    _emit({"schema_version": 1, **d}, args.out)


def cmd_eluder(args):
    if args.cls:
        E = eld.EvaluatedClass.from_dict(_json_arg(args.cls))
        res = eld.dim_de(E, args.eps_dim, node_cap=args.node_cap)
        kind = "dim_de"
    else:
        M = _env_from_args(args)
        levels = tuple(args.levels) if args.levels else (-1.0, 0.0, 1.0)
        grid = eld.full_grid(M.H, M.S, M.A, levels)
        fam = eld.deterministic_policies(M)
        res = eld.dim_be(M, grid, fam, args.eps_dim, node_cap=args.node_cap)
        kind = "dim_be"
    _emit({"kind": kind, "lower_bound_only": True, **res.to_dict()}, args.out)


def cmd_env_dump(args):
    M = _env_from_args(args)
    text = dumps(M)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def cmd_sweep(args):
    cfg = ExperimentConfig.load(args.config)
    grid = [float(e) for e in args.eps_grid.split(",")]
    table = sweep_epsilon(cfg, grid)
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="myopic-gap", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the learner for every seed in a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="artifact directory (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    for name, fn, hlp in (("gap", cmd_gap, "exploration gap report (JSON)"),
                          ("bounds", cmd_bounds, "computed gap next to closed-form bounds")):
        p = sub.add_parser(name, help=hlp)
        _add_env_args(p)
        _add_explore_args(p)
        p.add_argument("--q", type=_json_arg, help="Q-table (H, S, A) as JSON or path")
        p.add_argument("--greedy", type=_json_arg, help="greedy action table (H, S) as JSON or path")
        p.add_argument("--mode", choices=["exhaustive", "certified"], default="exhaustive")
        if name == "gap":
            p.add_argument("--candidates", help="JSON list of (H, S) action tables for certified mode")
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p = sub.add_parser("covering", help="Monte Carlo covering length")
    _add_env_args(p)
    p.add_argument("--policy", default="uniform", help="'uniform' or a JSON (H, S, A) policy")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_covering)

    p = sub.add_parser("eluder", help="brute-force Eluder dimensions")
    _add_env_args(p)
    p.add_argument("--class", dest="cls", help="EvaluatedClass JSON (or path)")
    p.add_argument("--eps", dest="eps_dim", type=float, default=0.5)
    p.add_argument("--levels", type=float, nargs="+", help="Q-table grid levels for dim_be")
    p.add_argument("--node-cap", type=int, default=eld.DEFAULT_NODE_CAP, dest="node_cap")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eluder)

    p = sub.add_parser("env", help="environment utilities")
    esub = p.add_subparsers(dest="env_command", required=True)
    d = esub.add_parser("dump", help="emit the canonical MDP JSON")
    _add_env_args(d)
    d.add_argument("--out")
    d.set_defaults(func=cmd_env_dump)

    p = sub.add_parser("sweep", help="regret trade-off table over an eps grid (CSV)")
    p.add_argument("--config", required=True)
    p.add_argument("--eps-grid", required=True, dest="eps_grid", help="comma-separated values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
