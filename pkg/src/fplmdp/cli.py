"""Command line entry point: ``fplmdp analyze|run|sweep|lowerbound``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .adversary import gen_lower_bound_instance
from .errors import ConfigError, MdpError
from .experiment import aggregate, load_config, run_experiment, sweep, write_aggregate, write_outputs
from .fpl import LambdaMode
from .learner_det import run as run_det
from .learner_oracle import run_oracle
from .learner_stoch import run_stochastic
from .mdpio import load_mdp
from .stochastic import StochasticMdp, build_catching_plan

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


def cmd_analyze(args) -> None:
    spec = load_mdp(args.mdp)
    mdp = spec.mdp
    print(f"states {mdp.num_states}  actions {mdp.num_actions}  kind {spec.kind}")
    if spec.graph is not None:
        g = spec.graph
        print(f"period {g.period}")
        print("classes " + " ".join(map(str, g.classes.tolist())))
        print(f"critical_length {g.critical_length}")
        print(f"transit_length {g.transit_length}")
    print(f"diameter {mdp.diameter!r}")
    if mdp.loop_state is None:
        print("catching plan: none (no deterministic self-loop)")
        return
    plan = build_catching_plan(mdp)
    print(f"catching plan: loop ({plan.loop_state}, {plan.loop_action})  ell_star {plan.ell_star}  "
          f"ceil_D {plan.ceil_d}  p_star {plan.p_star!r}")
    for s, tgt in enumerate(plan.targets):
        print(f"  target {s}: ell {tgt.ell}  wait {tgt.wait}  p {tgt.p!r}")


def _apply_seed(doc, seed):
    if seed is not None:
        doc = dict(doc, seeds=[seed])
    return doc


def cmd_run(args) -> None:
    doc, base = load_config(args.config)
    doc = _apply_seed(doc, args.seed)
    records = run_experiment(doc, base, Path(args.out))
    write_aggregate(aggregate(records), sys.stdout)


def cmd_sweep(args) -> None:
    doc, base = load_config(args.config)
    doc = _apply_seed(doc, args.seed)
    fits = sweep(doc, base, Path(args.out))
    for (algo, stat), (slope, intercept, r2) in fits.items():
        print(f"{algo} {stat}: slope {slope:.4f}  intercept {intercept:.4f}  r2 {r2:.4f}")


def cmd_lowerbound(args) -> None:
    s, a, horizon = args.states, args.actions, args.horizon
    base_seed = 0 if args.seed is None else args.seed
    records = []
    for i in range(args.trials):
        seed = base_seed + i
        graph, losses = gen_lower_bound_instance(s, a, horizon, seed=seed)
        mode = LambdaMode("horizon", horizon)
        for algo in args.algos:
            if algo == "det":
                rec = run_det(graph, losses, mode, 0, seed=seed)
            else:
                mdp = StochasticMdp.from_graph(graph, np.full(s, 1.0 / s))
                if algo == "stoch":
                    rec = run_stochastic(mdp, losses, mode, seed=seed)
                else:
                    rec = run_oracle(mdp, losses, 1.0 / s, mode, seed=seed)
            records.append(rec)
    if args.out:
        write_outputs(records, Path(args.out), write_runs=False)
    reference = 0.05 * math.sqrt(s * horizon * math.log(a)) if a > 1 else 0.0
    for row in aggregate(records):
        print(f"{row['algo']}: mean regret {row['mean_regret']:.3f} (std {row['std_regret']:.3f}, "
              f"{row['runs']} trials); 0.05*sqrt(|S| T log|A|) = {reference:.3f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fplmdp", description="FPL learners for adversarial MDPs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="period, classes, critical length, diameter and catching plan")
    p.add_argument("mdp")
    p.set_defaults(func=cmd_analyze)

    for name, func, text in (("run", cmd_run, "run a config"), ("sweep", cmd_sweep, "run a config and fit regret slopes")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--seed", type=int, help="replace the config's seed list with this seed")
        p.add_argument("--out", default="out")
        p.add_argument("--format", choices=["csv"], default="csv")
        p.set_defaults(func=func)

    p = sub.add_parser("lowerbound", help="learners on the cycle lower-bound instance")
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--actions", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--algos", nargs="+", choices=["det", "stoch", "oracle"], default=["det"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv"], default="csv")
    p.set_defaults(func=cmd_lowerbound)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MdpError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
