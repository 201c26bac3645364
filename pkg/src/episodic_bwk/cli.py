"""Command-line entry point ``episodic-bwk``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from episodic_bwk.dp import fluid_ub, opt_value, solve_bellman
from episodic_bwk.environments import ENV_KINDS, make_env
from episodic_bwk.errors import ConfigError, NumericalError
from episodic_bwk.harness import (
    AGENT_ALIASES,
    AGENT_KINDS,
    ExperimentConfig,
    emit_outputs,
    per_rep_rows,
    resolve_env,
    run_experiment,
    write_runlog_csv,
)
from episodic_bwk.model import EnvironmentModel
from episodic_bwk.oracles import ORACLE_KINDS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _load_env(ref: str) -> EnvironmentModel:
    """A JSON file path or a builder name such as ``paper-c1``."""
    if ref in ENV_KINDS:
        return make_env(ref)
    return resolve_env(ref)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _params(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {pair!r}")
        out[key.replace("-", "_")] = _parse_value(value)
    return out


def cmd_exact_opt(args) -> int:
    env = _load_env(args.env)
    table = solve_bellman(env)
    opt = opt_value(table, env, args.budget)
    ub = fluid_ub(env, args.budget)
    print(f"opt {opt:.12g}")
    print(f"fluid_ub {ub:.12g}")
    if args.dump_table:
        with open(args.dump_table, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "b", "theta", "V"])
            H, nb, C = env.H, env.max_budget + 1, env.num_contexts
            for h in range(1, H + 1):
                for b in range(nb):
                    for theta in range(C):
                        w.writerow([h, b, theta, repr(float(table.V[h - 1, b, theta]))])
    return EXIT_OK


def cmd_env_make(args) -> int:
    env = make_env(args.kind, **_params(args.param))
    env.save(args.out)
    print(f"wrote {args.out} ({env.num_contexts} contexts, {env.num_actions} actions, H={env.H})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    env = _load_env(args.env)
    budget = env.max_budget if args.budget is None else args.budget
    oracle = {"oracle": args.oracle, **_params(args.oracle_param)}
    cfg = ExperimentConfig(
        env=env, T=args.T, budgets=[budget] * args.T, reps=1, seed=args.seed,
        agents=[args.agent], oracle=oracle, delta=args.delta, alpha=args.alpha, M=args.M,
        schedule=args.schedule, debug=args.debug,
    )
    series = run_experiment(cfg)
    agent = series.agents[0]
    if series.failures[agent]:
        print(series.failures[agent][0], file=sys.stderr)
        return EXIT_NUMERICAL
    cum = series.cum_regret(agent)[0]
    print(f"agent {agent}  T={args.T}  B={budget}  opt={series.opt[0]:.6g}")
    print(f"cumulative regret {cum[-1]:.6g}  mean episode reward {series.rewards[agent][0].mean():.6g}")
    if args.out:
        write_runlog_csv(Path(args.out), per_rep_rows(series))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    series = run_experiment(cfg)
    paths = emit_outputs(series, args.out, plot=not args.no_plot)
    for agent in series.agents:
        mean, se = series.aggregate(agent)
        failed = len(series.failures[agent])
        print(f"{agent:>14}  cum_regret(T)={mean[-1]:.6g}  3se={3 * se[-1]:.3g}  failed_reps={failed}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="episodic-bwk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("exact-opt", help="solve the Bellman recursion and print opt and the fluid bound")
    q.add_argument("env", help=f"environment JSON file or one of {', '.join(ENV_KINDS)}")
    q.add_argument("--budget", "-B", type=int, required=True)
    q.add_argument("--dump-table", metavar="CSV", help="write V as rows of h,b,theta,V")
    q.set_defaults(func=cmd_exact_opt)

    e = sub.add_parser("env", help="environment utilities")
    esub = e.add_subparsers(dest="env_command", required=True)
    m = esub.add_parser("make", help="build a named environment and save it as JSON")
    m.add_argument("--kind", required=True, choices=ENV_KINDS)
    m.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="builder parameter, repeatable (e.g. --param H=12)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_env_make)

    s = sub.add_parser("simulate", help="run one agent for T episodes")
    s.add_argument("--env", required=True)
    s.add_argument("--agent", default="mimic", choices=sorted(AGENT_KINDS + tuple(AGENT_ALIASES)))
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", "-B", type=int)
    s.add_argument("--oracle", default="karm", choices=ORACLE_KINDS)
    s.add_argument("--oracle-param", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--M", type=int, default=0)
    s.add_argument("--schedule", default="default", choices=("default", "unlabeled"))
    s.add_argument("--debug", action="store_true", help="assert value-table invariants")
    s.add_argument("--out", help="write the per-episode run log CSV")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="run a regret experiment from a JSON run config")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--workers", type=int)
    b.add_argument("--no-plot", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
