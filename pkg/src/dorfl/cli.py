"""Command-line entry point: ``dorfl {run,sweep,verify,inspect-data}``."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checks import CRITERIA, FAST_CRITERIA
from .errors import ConfigurationError, DataFormatError, InvalidInputError
from .experiment import (build_dataset, dataset_checksum, load_config, prepare_output, run_experiment, sensitivity_sweep,
                         table_markdown, write_sweep_csv)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="INI file with [run]/[hyper]/[score]/[synthetic]/[adult]")
    p.add_argument("--seed", type=int, help="overrides run.seed (data and training)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one setting; repeatable, wins over --config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dorfl", description="Outlier-robust federated learning experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="train the configured method(s) and write reports")
    _common(run)
    run.add_argument("--out", metavar="DIR", help="output directory (overrides run.output_dir)")
    run.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")

    sweep = sub.add_parser("sweep", help="prior-mean sensitivity sweep on the synthetic data")
    _common(sweep)
    sweep.add_argument("--out", metavar="DIR")
    sweep.add_argument("--force", action="store_true")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sweep.add_argument("--offsets", default="-5,-4,-3,-2,-1,0,1,2,3,4,5",
                       help="comma-separated offsets in standard deviations")

    verify = sub.add_parser("verify", help="run the numerical property and oracle checks")
    verify.add_argument("--all", action="store_true", help="include the slow experiment-level checks")
    verify.add_argument("--criteria", default=None, help="comma-separated criterion numbers to run")

    inspect = sub.add_parser("inspect-data", help="summarise the configured dataset")
    _common(inspect)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed, args.out)
    reports = run_experiment(cfg, force=args.force)
    if len(reports) > 1:
        print(table_markdown(reports), end="")
    for r in reports:
        print(f"{r.method}: accuracy {r.overall_accuracy!r} worst-group {r.worst_group_accuracy!r} "
              f"excess-risk {r.excess_risk!r}")
    print(f"reports written to {cfg.output_dir}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed, args.out)
    offsets = [float(v) for v in args.offsets.split(",")]
    prepare_output(cfg.output_dir, args.force)
    points = sensitivity_sweep(cfg, offsets, jobs=args.jobs)
    path = os.path.join(cfg.output_dir, "plotdata", "sweep.csv")
    write_sweep_csv(points, path)
    for m, a in points:
        print(f"offset {m!r}: accuracy {a!r}")
    print(f"sweep written to {path}")
    return 0


def _cmd_verify(args) -> int:
    if args.criteria:
        numbers = [int(v) for v in args.criteria.split(",")]
    else:
        numbers = sorted(CRITERIA) if args.all else list(FAST_CRITERIA)
    failed = 0
    for n in numbers:
        result = CRITERIA[n]()
        print(f"[{n}] {result.line()}", flush=True)
        failed += result.status == "FAIL"
    return 1 if failed else 0


def _cmd_inspect(args) -> int:
    cfg = load_config(args.config, args.overrides, args.seed)
    data = build_dataset(cfg)
    print(f"dataset {cfg.dataset}, dimension {data.dim}, checksum {dataset_checksum(data)}")
    for i, (name, dist) in enumerate(zip(data.group_names, data.clients)):
        pos = float(np.mean(dist.labels == 1))
        line = f"  {name}: {dist.size} training samples, P(y=+1) {pos:.3f}"
        if data.contaminated:
            line += f", {int(data.contaminated[i].sum())} contaminated"
        line += f", {data.test_groups[i].size} test samples"
        print(line)
    print(f"  clean test: {data.clean_test.size} samples")
    if data.threshold is not None:
        print(f"  standardised capital-gain threshold D = {data.threshold!r}")
    return 0


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify, "inspect-data": _cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, DataFormatError, InvalidInputError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
