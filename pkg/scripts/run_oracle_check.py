#!/usr/bin/env python3
"""Check the closed-form contract optimum against an exhaustive grid search.

Samples random markets, solves each in closed form, then sweeps a dense
participation-only grid around the solution for every device type. Prints
the worst relative utility gap and optionally writes per-market rows to CSV.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from diffcontract import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=20, help="number of sampled markets")
    ap.add_argument("--points", type=int, default=200, help="grid points per contract axis")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--csv", help="write per-market gap rows here")
    args = ap.parse_args()

    argv = [
        "oracle",
        "--set", f"oracle.n_envs={args.envs}",
        "--set", f"oracle.grid_points={args.points}",
        "--set", f"oracle.seed={args.seed}",
    ]
    if args.csv:
        argv += ["--csv", args.csv]
    return cli.main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
