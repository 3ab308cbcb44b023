"""Flat key = value run configuration.

One schema drives everything: file parsing, --set overrides, validation, and
the canonical echo written into every run directory. Keys are dotted and
flat ("trainer.lr_actor = 2e-7"), unknown keys are rejected, and the echo
re-parses to the identical configuration, so any result is re-derivable from
the files it shipped with.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .env import ActionBounds, EnvRanges, RewardSpec
from .metrics import EnergyProxy
from .pruning import PruneConfig
from .sac import TrainerConfig


class ConfigError(ValueError):
    """Invalid key, unparsable value, or a value a domain type rejects."""


SCHEMES = {
    "diffusion_pruned": "diffusion",
    "diffusion": "diffusion",
    "gaussian_sac": "gaussian",
    "random": None,
    "complete_info": None,
}


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    return tuple(int(p.strip()) for p in s.split(",") if p.strip())


def _parse_str_tuple(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _parse_pair(s: str) -> tuple:
    parts = s.split(":")
    if len(parts) != 2:
        raise ValueError(f"expected 'lo:hi', got {s!r}")
    return (float(parts[0]), float(parts[1]))


def _parse_pair_tuple(s: str) -> tuple:
    return tuple(_parse_pair(p.strip()) for p in s.split(",") if p.strip())


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _fmt_pair(p) -> str:
    return f"{_fmt_float(p[0])}:{_fmt_float(p[1])}"


_PARSERS = {
    "str": (str, str),
    "int": (int, str),
    "float": (float, _fmt_float),
    "bool": (_parse_bool, lambda b: "true" if b else "false"),
    "int_tuple": (_parse_int_tuple, lambda t: ",".join(str(x) for x in t)),
    "str_tuple": (_parse_str_tuple, lambda t: ",".join(t)),
    "pair": (_parse_pair, _fmt_pair),
    "pair_tuple": (_parse_pair_tuple, lambda t: ",".join(_fmt_pair(p) for p in t)),
}


@dataclass
class RunConfig:
    schemes: tuple = ("diffusion_pruned",)
    seeds: tuple = (0,)
    out_dir: str = "runs/latest"

    env_psi_ranges: tuple = ((50.0, 100.0), (200.0, 250.0))
    env_c_range: tuple = (25.0, 35.0)
    env_vartheta_range: tuple = (10.0, 15.0)
    env_rho: float = 0.6
    env_c0: float = 0.01
    env_beta: float = 0.5
    env_M: int = 10
    env_dirichlet_alpha: float = 1.0

    bounds_s_max: float = 10_000.0
    bounds_r_max: float = 2_000.0

    reward_penalty_weight: float = 1.0
    reward_normalizer: str = "complete_info"
    reward_kappa: float = 1.0

    trainer_steps: int = 50_000
    trainer_batch_size: int = 256
    trainer_gamma: float = 0.95
    trainer_varsigma: float = 0.0
    trainer_target_rate: float = 0.005
    trainer_lr_actor: float = 2e-7
    trainer_lr_critic: float = 2e-6
    trainer_warmup: int = 1000
    trainer_buffer_capacity: int = 100_000
    trainer_eval_interval: int = 2500
    trainer_eval_envs: int = 100
    trainer_eval_seed: int = 90210
    trainer_episode_mode: str = "one_step"
    trainer_episode_len: int = 100
    trainer_actor_hidden: tuple = (128, 128)
    trainer_critic_hidden: tuple = (128, 128)
    trainer_checkpoint_interval: int = 0

    diffusion_T: int = 6
    diffusion_delta_lo: float = 0.2
    diffusion_delta_hi: float = 0.2
    diffusion_schedule: str = "constant"

    prune_target_sparsity: float = 0.10
    prune_frequency: int = 1000
    prune_total_prunes: int = 40
    prune_start_step: int = 1000
    prune_mode: str = "quantile"

    metrics_record_wall_time: bool = True
    metrics_joules_per_flop: float = 1e-11
    metrics_grams_co2_per_kwh: float = 400.0

    oracle_n_envs: int = 20
    oracle_grid_points: int = 200
    oracle_span: float = 0.25
    oracle_seed: int = 2024
    oracle_include_ic: bool = False

    # domain object builders; constructing them is also the validation pass

    def ranges(self) -> EnvRanges:
        return EnvRanges(
            psi_ranges=self.env_psi_ranges,
            c_range=self.env_c_range,
            vartheta_range=self.env_vartheta_range,
            rho=self.env_rho,
            c0=self.env_c0,
            beta=self.env_beta,
            M=self.env_M,
            dirichlet_alpha=self.env_dirichlet_alpha,
        )

    def bounds(self) -> ActionBounds:
        return ActionBounds(s_max=self.bounds_s_max, r_max=self.bounds_r_max)

    def reward_spec(self, scheme: str = "diffusion_pruned") -> RewardSpec:
        return RewardSpec(
            penalty_weight=self.reward_penalty_weight,
            normalizer=self.reward_normalizer,
            kappa=self.reward_kappa,
            ic_exempt=scheme == "complete_info",
        )

    def prune_config(self) -> PruneConfig:
        return PruneConfig(
            target_sparsity=self.prune_target_sparsity,
            frequency=self.prune_frequency,
            total_prunes=self.prune_total_prunes,
            start_step=self.prune_start_step,
            mode=self.prune_mode,
        )

    def trainer_config(self, scheme: str, seed: int) -> TrainerConfig:
        return TrainerConfig(
            steps=self.trainer_steps,
            batch_size=self.trainer_batch_size,
            gamma=self.trainer_gamma,
            varsigma=self.trainer_varsigma,
            target_rate=self.trainer_target_rate,
            lr_actor=self.trainer_lr_actor,
            lr_critic=self.trainer_lr_critic,
            warmup=self.trainer_warmup,
            buffer_capacity=self.trainer_buffer_capacity,
            eval_interval=self.trainer_eval_interval,
            eval_envs=self.trainer_eval_envs,
            eval_seed=self.trainer_eval_seed,
            seed=seed,
            episode_mode=self.trainer_episode_mode,
            episode_len=self.trainer_episode_len,
            actor_hidden=self.trainer_actor_hidden,
            critic_hidden=self.trainer_critic_hidden,
            diffusion_T=self.diffusion_T,
            delta_lo=self.diffusion_delta_lo,
            delta_hi=self.diffusion_delta_hi,
            schedule_kind=self.diffusion_schedule,
            prune=self.prune_config() if scheme == "diffusion_pruned" else None,
            record_wall_time=self.metrics_record_wall_time,
            checkpoint_interval=self.trainer_checkpoint_interval,
        )

    def energy_proxy(self) -> EnergyProxy:
        return EnergyProxy(
            joules_per_flop=self.metrics_joules_per_flop,
            grams_co2_per_kwh=self.metrics_grams_co2_per_kwh,
        )

    def validate(self) -> None:
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ConfigError(
                    f"unknown scheme {scheme!r}; valid: {', '.join(sorted(SCHEMES))}"
                )
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.oracle_n_envs < 0 or self.oracle_grid_points < 2:
            raise ConfigError("oracle needs n_envs >= 0 and grid_points >= 2")
        if not (0.0 < self.oracle_span < 1.0):
            raise ConfigError("oracle.span must lie in (0, 1)")
        try:
            self.ranges()
            self.bounds()
            self.energy_proxy()
            for scheme in self.schemes:
                self.reward_spec(scheme)
                if SCHEMES[scheme] is not None:
                    self.trainer_config(scheme, self.seeds[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# key -> (attribute, parser name), in echo order
_SCHEMA: dict[str, tuple[str, str]] = {
    "schemes": ("schemes", "str_tuple"),
    "seeds": ("seeds", "int_tuple"),
    "out_dir": ("out_dir", "str"),
    "env.psi_ranges": ("env_psi_ranges", "pair_tuple"),
    "env.c_range": ("env_c_range", "pair"),
    "env.vartheta_range": ("env_vartheta_range", "pair"),
    "env.rho": ("env_rho", "float"),
    "env.c0": ("env_c0", "float"),
    "env.beta": ("env_beta", "float"),
    "env.M": ("env_M", "int"),
    "env.dirichlet_alpha": ("env_dirichlet_alpha", "float"),
    "bounds.s_max": ("bounds_s_max", "float"),
    "bounds.r_max": ("bounds_r_max", "float"),
    "reward.penalty_weight": ("reward_penalty_weight", "float"),
    "reward.normalizer": ("reward_normalizer", "str"),
    "reward.kappa": ("reward_kappa", "float"),
    "trainer.steps": ("trainer_steps", "int"),
    "trainer.batch_size": ("trainer_batch_size", "int"),
    "trainer.gamma": ("trainer_gamma", "float"),
    "trainer.varsigma": ("trainer_varsigma", "float"),
    "trainer.target_rate": ("trainer_target_rate", "float"),
    "trainer.lr_actor": ("trainer_lr_actor", "float"),
    "trainer.lr_critic": ("trainer_lr_critic", "float"),
    "trainer.warmup": ("trainer_warmup", "int"),
    "trainer.buffer_capacity": ("trainer_buffer_capacity", "int"),
    "trainer.eval_interval": ("trainer_eval_interval", "int"),
    "trainer.eval_envs": ("trainer_eval_envs", "int"),
    "trainer.eval_seed": ("trainer_eval_seed", "int"),
    "trainer.episode_mode": ("trainer_episode_mode", "str"),
    "trainer.episode_len": ("trainer_episode_len", "int"),
    "trainer.actor_hidden": ("trainer_actor_hidden", "int_tuple"),
    "trainer.critic_hidden": ("trainer_critic_hidden", "int_tuple"),
    "trainer.checkpoint_interval": ("trainer_checkpoint_interval", "int"),
    "diffusion.T": ("diffusion_T", "int"),
    "diffusion.delta_lo": ("diffusion_delta_lo", "float"),
    "diffusion.delta_hi": ("diffusion_delta_hi", "float"),
    "diffusion.schedule": ("diffusion_schedule", "str"),
    "prune.target_sparsity": ("prune_target_sparsity", "float"),
    "prune.frequency": ("prune_frequency", "int"),
    "prune.total_prunes": ("prune_total_prunes", "int"),
    "prune.start_step": ("prune_start_step", "int"),
    "prune.mode": ("prune_mode", "str"),
    "metrics.record_wall_time": ("metrics_record_wall_time", "bool"),
    "metrics.joules_per_flop": ("metrics_joules_per_flop", "float"),
    "metrics.grams_co2_per_kwh": ("metrics_grams_co2_per_kwh", "float"),
    "oracle.n_envs": ("oracle_n_envs", "int"),
    "oracle.grid_points": ("oracle_grid_points", "int"),
    "oracle.span": ("oracle_span", "float"),
    "oracle.seed": ("oracle_seed", "int"),
    "oracle.include_ic": ("oracle_include_ic", "bool"),
}


def parse_assignments(text: str, source: str = "<config>") -> dict:
    """KEY = VALUE lines into raw strings. Blank lines and # comments skip."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def apply_assignments(cfg: RunConfig, raw: dict, source: str = "<config>") -> RunConfig:
    updates = {}
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        attr, kind = _SCHEMA[key]
        parse, _ = _PARSERS[kind]
        try:
            updates[attr] = parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from exc
    return replace(cfg, **updates)


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the file, then each --set override in order."""
    cfg = RunConfig()
    if path is not None:
        with open(path, "r") as fh:
            cfg = apply_assignments(cfg, parse_assignments(fh.read(), str(path)), str(path))
    for i, item in enumerate(overrides or []):
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg = apply_assignments(
            cfg, {key.strip(): value.strip()}, source=f"--set[{i}]"
        )
    cfg.validate()
    return cfg


def format_config(cfg: RunConfig) -> str:
    """Canonical echo; parsing it back reproduces the configuration."""
    lines = []
    for key, (attr, kind) in _SCHEMA.items():
        _, fmt = _PARSERS[kind]
        lines.append(f"{key} = {fmt(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"
