"""Command-line entry point.

Exit codes: 0 on success, 2 on a configuration error, 3 when an invariant or a
run fails.  ``CVARRL_PARALLELISM`` sets the default number of worker processes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dp import solve_optimal
from .envs import InstanceError, InvariantError, TabularMdp, load_instance
from .grid import BudgetGrid
from .harness import ConfigError, ExperimentConfig, default_parallelism, run_experiment
from .history import OracleInconsistency
from .kernels import BudgetOverflow
from .plot import PlotError, render_regret_svg
from .risk import DistributionError

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _parallelism(args) -> int:
    return args.parallelism if args.parallelism is not None else default_parallelism()


def cmd_run(args, mode: str) -> int:
    cfg = ExperimentConfig.load(args.config)
    if cfg.mode != mode:
        raise ConfigError(f"config mode is {cfg.mode!r}, expected {mode!r}")
    res = run_experiment(cfg, _parallelism(args), args.seed_offset)
    summary = {
        "config_hash": cfg.digest(),
        "aggregate": {learner: res.aggregate(learner) for learner in cfg.learners},
        "errors": res.errors,
    }
    _emit(summary, None)
    for e in res.errors:
        print(f"seed {e['seed']} ({e['learner']}): {e['message']}", file=sys.stderr)
    return EXIT_INVARIANT if res.errors else EXIT_OK


def cmd_oracle(args) -> int:
    env = load_instance(args.mdp)
    if not isinstance(env, TabularMdp):
        raise ConfigError("oracle solve needs an MDP document")
    if not 0.0 < args.tau <= 1.0 or not 0.0 < args.eta <= 1.0:
        raise ConfigError("tau and eta must lie in (0, 1]")
    grid = BudgetGrid.from_eta(args.eta)
    try:
        env.grid_rewards(grid.n)
    except (InstanceError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sol = solve_optimal(env, args.tau, grid)
    _emit({"cvar_star": sol.cvar, "b_star": sol.b_star, "eta": grid.eta,
           "v1": sol.values.v[0, env.s1].tolist()}, args.output)
    return EXIT_OK


def cmd_diag(args) -> int:
    from . import diagnostics as dg

    doc, threshold = dg.parse_threshold(_read_json(args.config))
    if args.check == "concentration":
        try:
            dist = dg.resolve_dist(doc["dist"])
            out = dg.concentration_coverage(dist, int(doc["N"]), float(doc["tau"]), float(doc["delta"]),
                                            int(doc.get("trials", 1000)), int(doc.get("seed", 0)) + args.seed_offset)
        except (KeyError, TypeError, DistributionError) as exc:
            raise ConfigError(f"bad concentration config: {exc}") from exc
        ok = out["coverage"] >= threshold
    elif args.check == "coupling":
        try:
            out = dg.coupling_check(
                int(doc.get("S", 3)), int(doc.get("A", 2)), int(doc.get("H", 3)), float(doc["eta"]),
                float(doc["tau"]), int(doc.get("rollouts", 1000)), int(doc.get("seed", 0)) + args.seed_offset,
                int(doc.get("instances", 50)), int(doc.get("fine_n", 12)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad coupling config: {exc}") from exc
        ok = out["sandwich_fraction"] == 1.0 and out["ordering_fraction"] == 1.0
    else:
        cfg = ExperimentConfig.from_json(doc, Path(args.config).parent)
        if args.seed_offset:
            cfg.seeds = [s + args.seed_offset for s in cfg.seeds]
        out = dg.confidence_events(cfg, _parallelism(args))
        if args.check == "simulation-gap":
            if cfg.mode != "rl":
                raise ConfigError("the simulation-gap check needs an rl config")
            out["fractions"] = {k: {"simulation_gap": v.get("simulation_gap"), "runs": v.get("runs")}
                                for k, v in out["fractions"].items()}
        fr = [v for f in out["fractions"].values() for k, v in f.items() if k != "runs" and v is not None]
        ok = not out["errors"] and all(v >= threshold for v in fr)
    out["threshold"] = threshold
    out["passed"] = ok
    _emit(out, None)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_plot(args) -> int:
    doc = _read_json(args.results)
    svg = render_regret_svg(doc, log_x=args.log_x, log_y=args.log_y, title=args.title)
    Path(args.output).write_text(svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvarrl", description="CVaR bandit and tabular RL simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def runner(name: str, helptext: str):
        grp = sub.add_parser(name, help=helptext).add_subparsers(dest="action", required=True)
        r = grp.add_parser("run", help="run every learner and seed of a config")
        r.add_argument("config")
        r.add_argument("-j", "--parallelism", type=int, default=None, help="worker processes (default: $CVARRL_PARALLELISM or 1)")
        r.add_argument("--seed-offset", type=int, default=0, help="added to every seed, for splitting sweeps")

    runner("mab", "bandit experiments")
    runner("rl", "tabular RL experiments")

    o = sub.add_parser("oracle", help="exact CVaR optimum of an MDP").add_subparsers(dest="action", required=True)
    s = o.add_parser("solve")
    s.add_argument("mdp")
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("-o", "--output", default=None)

    d = sub.add_parser("diag", help="structural diagnostics")
    d.add_argument("check", choices=("concentration", "coupling", "pessimism", "simulation-gap"))
    d.add_argument("config")
    d.add_argument("-j", "--parallelism", type=int, default=None)
    d.add_argument("--seed-offset", type=int, default=0)

    pl = sub.add_parser("plot", help="render a results JSON as SVG")
    pl.add_argument("results")
    pl.add_argument("-o", "--output", required=True)
    pl.add_argument("--log-x", action="store_true")
    pl.add_argument("--log-y", action="store_true")
    pl.add_argument("--title", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("mab", "rl"):
            return cmd_run(args, args.command)
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "diag":
            return cmd_diag(args)
        return cmd_plot(args)
    except (ConfigError, InstanceError, DistributionError, PlotError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, OracleInconsistency, BudgetOverflow) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
