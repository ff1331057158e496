"""Accuracy of dorfl as the prior mean of the outlier score moves by m standard deviations."""
import argparse
import os

from dorfl.checks import SWEEP_OFFSETS
from dorfl.experiment import RunConfig, prepare_output, sensitivity_sweep, write_sweep_csv
from dorfl.datasets import SyntheticConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    cfg = RunConfig(seed=args.seed, output_dir=args.out, synthetic=SyntheticConfig(seed=args.seed))
    prepare_output(args.out, args.force)
    points = sensitivity_sweep(cfg, SWEEP_OFFSETS, jobs=args.jobs)
    write_sweep_csv(points, os.path.join(args.out, "plotdata", "sweep.csv"))
    accs = [a for _, a in points]
    for m, a in points:
        print(f"{m:+.0f} sd: {a:.4f}")
    print(f"spread {100 * (max(accs) - min(accs)):.1f} points")


if __name__ == "__main__":
    main()
