import time
import numpy as np
from diffcontract import sac
from diffcontract.env import EnvRanges, RewardSpec, ActionBounds

ranges = EnvRanges()
spec = RewardSpec()
bounds = ActionBounds()

candidates = [
    ("a1e-3_c3e-3", 1e-3, 3e-3, 50_000),
    ("a3e-4_c1e-3", 3e-4, 1e-3, 50_000),
    ("a3e-3_c1e-2", 3e-3, 1e-2, 15_000),
    ("a1e-3_c1e-2", 1e-3, 1e-2, 15_000),
]

for name, lra, lrc, steps in candidates:
    for seed in ([0, 1] if steps == 50_000 else [0]):
        cfg = sac.TrainerConfig(
            steps=steps, lr_actor=lra, lr_critic=lrc, seed=seed,
            eval_interval=5000, eval_envs=100,
        )
        t0 = time.monotonic()
        try:
            res = sac.train(cfg, ranges, spec, bounds, scheme="diffusion_pruned")
            em = sac.evaluate(res.actor, ranges, bounds, spec, 200, np.random.default_rng(90210))
            tail = " | ".join(
                f"{r.step}:{r.eval_reward:.3f}" for r in res.log.rows[::2]
            )
            line = (
                f"{name} seed{seed}: final_eval={em.reward_mean:.4f} "
                f"violation={em.violation_mean:.1f} server_u={em.server_utility_mean:.1f} "
                f"sparsity={res.log.rows[-1].sparsity:.4f} "
                f"({time.monotonic()-t0:.0f}s)\n  trace {tail}"
            )
        except Exception as exc:
            line = f"{name} seed{seed}: FAILED {exc!r}"
        print(line, flush=True)
        with open("/root/pkg/.tuning/results.txt", "a") as fh:
            fh.write(line + "\n")
