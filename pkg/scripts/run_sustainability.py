#!/usr/bin/env python3
"""Measure the computational footprint of pruning: train the pruned agent and
its dense twin on the same seed, then report FLOPs, the energy proxy, and the
prune schedule audit.

The energy figures use a placeholder joules-per-FLOP constant; treat them as
relative comparisons between the two arms, not as hardware measurements.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from diffcontract import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sustainability")
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rc = cli.main(
        [
            "train",
            "--out", args.out,
            "--set", "schemes=diffusion_pruned,diffusion",
            "--set", f"seeds={args.seed}",
            "--set", f"trainer.steps={args.steps}",
            "--set", "trainer.lr_actor=3e-4",
            "--set", "trainer.lr_critic=1e-3",
        ]
    )
    if rc != 0:
        return rc

    pruned = f"{args.out}/diffusion_pruned/seed{args.seed}"
    dense = f"{args.out}/diffusion/seed{args.seed}"
    rc = cli.main(["prune-report", "--run", pruned])
    if rc != 0:
        return rc
    return cli.main(["compare", pruned, dense])


if __name__ == "__main__":
    raise SystemExit(main())
