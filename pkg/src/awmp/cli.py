"""Command line entry point: ``awmp train | eval | aggregate | oracle``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from . import tabular


def _train(args):
    if args.config:
        config = harness.load_config(args.config)
    else:
        config = harness.parse_config(harness.render_config(harness.ExperimentConfig()), os.environ)
    if args.seed is not None:
        config = config.with_seeds(args.seed)
    if args.out:
        config.out_dir = args.out
    status = 0
    for res in harness.run_experiment(config):
        if res.error:
            print(f"seed {res.seed}: ABORTED after {res.rows} rows ({res.error}) -> {res.metrics_path}")
            status = 1
        else:
            print(f"seed {res.seed}: {res.rows} rows -> {res.metrics_path}")
    return status


def _eval(args):
    returns, traj = harness.evaluate_checkpoint(args.checkpoint, args.episodes, args.seed)
    for i, r in enumerate(returns):
        print(f"episode {i}\t{r!r}")
    print(f"mean\t{float(np.mean(returns))!r}")
    if args.trajectory:
        from .envs import format_trajectory

        Path(args.trajectory).write_text(format_trajectory(traj))
    return 0


def _aggregate(args):
    try:
        agg, png = harness.write_aggregate(args.inputs, args.out, plot=not args.no_plot, title=args.title)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{len(agg.step)} steps from {agg.n_seeds} files -> {args.out}")
    if png:
        print(f"figure -> {png}")
    return 0


def _fmt_table(rows):
    return "\n".join("  " + "  ".join(f"{x: .10f}" for x in row) for row in rows)


def _oracle(args):
    try:
        mdp = tabular.parse_mdp(Path(args.mdp).read_text())
    except tabular.MDPFormatError as exc:
        print(f"error: {args.mdp}: {exc}", file=sys.stderr)
        return 2
    cert = tabular.certify(mdp, args.alpha, tol=args.tol)
    res = cert["result"]
    probs = res.policy.probs
    gap = float(np.max(probs.max(axis=1) - probs.min(axis=1)))
    print(f"states {mdp.n_states}  actions {mdp.n_actions}  gamma {mdp.gamma!r}  alpha {args.alpha!r}")
    print(f"policy iterations: {len(res.history)}")
    print(f"evaluation sweeps: {sum(res.eval_sweeps)} total, per iteration {list(res.eval_sweeps)}")
    print("Q*:")
    print(_fmt_table(res.values.q))
    print("V*:")
    print(_fmt_table(res.values.v[:, None]))
    print("pi*:")
    print(_fmt_table(probs))
    print(f"pi* max-min row gap: {gap:.3e}")
    for name in ("contraction", "monotone"):
        print(f"certificate {name}: {'PASS' if cert[name] else 'FAIL'}")
    return 0 if cert["contraction"] and cert["monotone"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="awmp", description="SAC and SAC-AWMP on toy control tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every seed of a config, one metrics file each")
    t.add_argument("--config", help="INI file; AWMP_<SECTION>_<KEY> variables override it")
    t.add_argument("--seed", type=int, nargs="+", help="run only these seeds")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="greedy evaluation of a saved checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, help="reset stream seed (default: the run's seed)")
    e.add_argument("--trajectory", help="write the first episode as a TSV trajectory")
    e.set_defaults(func=_eval)

    a = sub.add_parser("aggregate", help="mean and half-std band across seed files")
    a.add_argument("--in", dest="inputs", nargs="+", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--title")
    a.add_argument("--no-plot", action="store_true", help="skip the PNG")
    a.set_defaults(func=_aggregate)

    o = sub.add_parser("oracle", help="exact soft policy iteration on an MDP file")
    o.add_argument("--mdp", required=True)
    o.add_argument("--alpha", type=float, required=True)
    o.add_argument("--tol", type=float, default=1e-12)
    o.set_defaults(func=_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
