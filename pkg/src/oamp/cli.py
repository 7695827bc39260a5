"""Command-line entry point.

Subcommands: run (Monte-Carlo experiment), se (prediction only),
compare (two result CSVs), selftest (orthogonality/Gaussianity suite).
Exit codes: 0 success, 1 selftest failure, 2 config error, 3 divergence.
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, DivergenceError, ExperimentFailure
from .harness import (
    compare_runs,
    read_csv_run,
    run_experiment,
    run_selftest,
    write_result,
)
from .model import load_config


def _add_common(p):
    p.add_argument("config", help="key = value config file")
    p.add_argument("--out", default=".", help="output directory (default: cwd)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--name", default=None, help="experiment name (default: config stem)")


def build_parser():
    parser = argparse.ArgumentParser(prog="oamp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured Monte-Carlo experiment")
    _add_common(p_run)
    p_run.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="trial worker processes (default: logical cores)")

    p_se = sub.add_parser("se", help="emit the state-evolution prediction only")
    _add_common(p_se)

    p_cmp = sub.add_parser("compare", help="per-iteration MSE ratio of two result CSVs")
    p_cmp.add_argument("csv_a")
    p_cmp.add_argument("csv_b")

    p_self = sub.add_parser("selftest", help="orthogonality/Gaussianity property suite")
    p_self.add_argument("--n", type=int, default=1024)
    p_self.add_argument("--seeds", type=int, default=5)
    p_self.add_argument("--iterations", type=int, default=10)
    return parser


def _cmd_run(args, se_only=False):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if se_only:
        cfg = cfg.with_overrides(algorithm="se")
    name = args.name or os.path.splitext(os.path.basename(args.config))[0]
    threads = getattr(args, "threads", 1)
    result = run_experiment(cfg, threads=threads, experiment=name)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"{name}.csv")
    json_path = os.path.join(args.out, f"{name}.json")
    write_result(result, csv_path, json_path)
    print(f"wrote {csv_path} ({result.completed} trials, {result.diverged} diverged, "
          f"{result.wall_clock:.1f}s)")
    return 0


def _cmd_compare(args):
    a = read_csv_run(args.csv_a)
    b = read_csv_run(args.csv_b)
    rows = compare_runs(a, b)
    print(f"{'iter':>4}  {'a/b (dB)':>10}  {'p-value':>10}  significant")
    for row in rows:
        print(f"{row['iter']:>4}  {row['ratio_db']:>10.3f}  {row['p_value']:>10.3g}  "
              f"{'yes' if row['significant'] else 'no'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "se":
            return _cmd_run(args, se_only=True)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "selftest":
            ok = run_selftest(n=args.n, seeds=args.seeds, iterations=args.iterations)
            return 0 if ok else 1
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, ExperimentFailure) as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
