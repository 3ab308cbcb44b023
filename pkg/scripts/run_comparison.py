#!/usr/bin/env python3
"""Train the pruned diffusion agent against its ablations and baselines,
then print the cross-scheme summary and the FLOP comparison.

Produces under --out:
    <scheme>/seed<N>/{log.csv,prune_events.csv,run.json,config.txt,checkpoint.npz}
    summary.json

The stock config ships the conservative learning rates; they need far more
than 50k steps to move. The rates set here converge on one CPU core in
roughly eight minutes per 50k-step run, so a full three-seed comparison is
an overnight-coffee job, and --quick shrinks it to a couple of minutes.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from diffcontract import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/comparison")
    ap.add_argument("--steps", type=int, default=50_000)
    ap.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    ap.add_argument("--with-gaussian", action="store_true", help="add the gaussian_sac arm")
    ap.add_argument("--quick", action="store_true", help="tiny smoke-scale settings")
    args = ap.parse_args()

    schemes = "diffusion_pruned,diffusion,random,complete_info"
    if args.with_gaussian:
        schemes += ",gaussian_sac"

    overrides = [
        f"schemes={schemes}",
        f"seeds={args.seeds}",
        f"trainer.steps={args.steps}",
        "trainer.lr_actor=3e-4",
        "trainer.lr_critic=1e-3",
    ]
    if args.quick:
        overrides += [
            "trainer.steps=2000",
            "trainer.warmup=500",
            "trainer.eval_interval=500",
            "trainer.eval_envs=20",
            "prune.start_step=500",
            "prune.frequency=100",
            "prune.total_prunes=10",
        ]

    argv = ["train", "--out", args.out]
    for kv in overrides:
        argv += ["--set", kv]
    rc = cli.main(argv)
    if rc != 0:
        return rc

    seeds = [s.strip() for s in args.seeds.split(",") if s.strip()]
    pairs = []
    for seed in seeds:
        pairs += [
            f"{args.out}/diffusion_pruned/seed{seed}",
            f"{args.out}/diffusion/seed{seed}",
        ]
    return cli.main(["compare", *pairs])


if __name__ == "__main__":
    raise SystemExit(main())
