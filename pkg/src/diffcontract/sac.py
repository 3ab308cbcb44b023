"""Soft actor-critic training loop for the diffusion contract policy.

Twin critics with target copies regress onto y = r + gamma * (1 - done) *
min(Q1', Q2')(e', a'), with a' drawn from the target policy. The actor
ascends the min of the online critics by backpropagating the critic's
action-gradient through the frozen-noise reverse diffusion chain. With
one-step episodes (the default: each sampled market is its own episode) the
bootstrap term vanishes and critic targets equal observed rewards exactly.

Every random draw flows from named child streams of one seed, so a run is
fully reproducible; a FLOP ledger records the cost of each phase as it runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion, nn, pruning
from .env import (
    ActionBounds,
    EnvRanges,
    RewardSpec,
    action_dim,
    compute_reward,
    decode_action,
    encode_state,
    realized_device_utility,
    sample_env,
    state_dim,
)
from .contracts import check_feasibility, server_utility
from .metrics import Diagnostics, FlopLedger, LogRow, TrainLog, mlp_pass_flops


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or reward stops being finite. Carries context."""

    def __init__(self, message: str, step: int, details: dict):
        super().__init__(f"{message} at step {step}: {details}")
        self.step = step
        self.details = details


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 50_000
    batch_size: int = 256
    gamma: float = 0.95
    varsigma: float = 0.0
    target_rate: float = 0.005
    lr_actor: float = 2e-7
    lr_critic: float = 2e-6
    warmup: int = 1000
    buffer_capacity: int = 100_000
    eval_interval: int = 2500
    eval_envs: int = 100
    eval_seed: int = 90210
    seed: int = 0
    episode_mode: str = "one_step"
    episode_len: int = 100
    actor_hidden: tuple = (128, 128)
    critic_hidden: tuple = (128, 128)
    diffusion_T: int = 6
    delta_lo: float = 0.2
    delta_hi: float = 0.2
    schedule_kind: str = "constant"
    prune: pruning.PruneConfig | None = field(default_factory=pruning.PruneConfig)
    record_wall_time: bool = True
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.varsigma < 0:
            raise ValueError("varsigma must be nonnegative")
        if not (0.0 < self.target_rate <= 1.0):
            raise ValueError("target_rate must lie in (0, 1]")
        for lr in (self.lr_actor, self.lr_critic):
            if not (0.0 < lr <= 1.0):
                raise ValueError("learning rates must lie in (0, 1]")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.steps > self.warmup and self.warmup < self.batch_size:
            raise ValueError("warmup must cover at least one batch before updates start")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer must hold at least one batch")
        if self.eval_interval < 1 or self.eval_envs < 1:
            raise ValueError("eval cadence and size must be positive")
        if self.episode_mode not in ("one_step", "multi_step"):
            raise ValueError("episode_mode must be 'one_step' or 'multi_step'")
        if self.episode_len < 1:
            raise ValueError("episode_len must be at least 1")
        if self.diffusion_T < 1:
            raise ValueError("diffusion_T must be at least 1")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be nonnegative")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity, dtype=bool)
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, reward, next_state, done) -> None:
        i = self._head
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._dones[i] = done
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator, replace: bool = False) -> Batch:
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not replace and batch_size > self._size:
            raise ValueError("not enough transitions to sample without replacement")
        if self._size == 0:
            raise ValueError("buffer is empty")
        idx = rng.choice(self._size, size=batch_size, replace=replace)
        return Batch(
            states=self._states[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            dones=self._dones[idx].copy(),
        )


@dataclass
class CriticEnsemble:
    """Twin Q networks with target copies and their optimizer states."""

    q1: nn.Mlp
    q2: nn.Mlp
    q1_target: nn.Mlp
    q2_target: nn.Mlp
    adam1: nn.AdamState
    adam2: nn.AdamState

    @staticmethod
    def _join(states, actions) -> np.ndarray:
        return np.concatenate([states, actions], axis=1)

    def online_min(self, states, actions) -> np.ndarray:
        x = self._join(states, actions)
        return np.minimum(nn.forward_masked(self.q1, x)[:, 0], nn.forward_masked(self.q2, x)[:, 0])

    def target_min(self, states, actions) -> np.ndarray:
        x = self._join(states, actions)
        return np.minimum(
            nn.forward_masked(self.q1_target, x)[:, 0],
            nn.forward_masked(self.q2_target, x)[:, 0],
        )

    def value_and_action_grad(self, states, actions):
        """Per-sample min of the online critics and its gradient w.r.t. the
        action inputs. Ties resolve to the first critic."""
        x = self._join(states, actions)
        y1, c1 = nn.forward_cached(self.q1, x)
        y2, c2 = nn.forward_cached(self.q2, x)
        v1, v2 = y1[:, 0], y2[:, 0]
        take1 = (v1 <= v2)[:, None]
        q = np.where(take1[:, 0], v1, v2)
        _, dx1 = nn.backward_from_cache(self.q1, c1, np.where(take1, 1.0, 0.0))
        _, dx2 = nn.backward_from_cache(self.q2, c2, np.where(take1, 0.0, 1.0))
        S = states.shape[1]
        return q, (dx1 + dx2)[:, S:]

    def sync_targets(self, rate: float) -> None:
        nn.soft_update(self.q1_target, self.q1, rate)
        nn.soft_update(self.q2_target, self.q2, rate)


def make_critics(s_dim: int, a_dim: int, hidden: tuple, rng: np.random.Generator) -> CriticEnsemble:
    dims = [s_dim + a_dim, *hidden, 1]
    q1 = nn.create_mlp(dims, rng, final_init_scale=3e-3)
    q2 = nn.create_mlp(dims, rng, final_init_scale=3e-3)
    return CriticEnsemble(
        q1=q1,
        q2=q2,
        q1_target=q1.copy(),
        q2_target=q2.copy(),
        adam1=nn.AdamState.for_net(q1),
        adam2=nn.AdamState.for_net(q2),
    )


class DiffusionActor:
    """Online and target diffusion policies plus the actor optimizer."""

    kind = "diffusion"

    def __init__(self, policy: diffusion.DiffusionPolicy):
        self.policy = policy
        self.target = policy.copy()
        self.adam = nn.AdamState.for_net(policy.eps_net.net)

    @classmethod
    def build(cls, s_dim: int, a_dim: int, bounds: ActionBounds, cfg: TrainerConfig, rng):
        schedule = diffusion.build_schedule(
            cfg.diffusion_T, cfg.delta_lo, cfg.delta_hi, cfg.schedule_kind
        )
        eps = diffusion.make_eps_net(a_dim, s_dim, cfg.diffusion_T, cfg.actor_hidden, rng)
        return cls(diffusion.DiffusionPolicy(eps_net=eps, schedule=schedule, bounds=bounds))

    @property
    def online_net(self) -> nn.Mlp:
        return self.policy.eps_net.net

    @property
    def target_net(self) -> nn.Mlp:
        return self.target.eps_net.net

    @property
    def passes_per_sample(self) -> int:
        return self.policy.schedule.T

    def act(self, state, rng) -> np.ndarray:
        a, _ = diffusion.reverse_sample(self.policy, state, rng)
        return a

    def eval_action(self, state, rng, env=None) -> np.ndarray:
        a, _ = diffusion.reverse_sample(self.target, state, rng)
        return a

    def target_actions(self, states, rng):
        actions = diffusion.sample_actions(self.target, states, rng)
        credit = np.full(
            states.shape[0],
            diffusion.schedule_entropy(self.target.schedule, self.policy.action_dim),
        )
        return actions, credit

    def update(self, states, critics: CriticEnsemble, lr: float, rng) -> float:
        loss, grads = diffusion.policy_loss(self.policy, critics, states, rng)
        nn.adam_step(self.online_net, grads, self.adam, lr)
        return loss

    def sync_targets(self, rate: float) -> None:
        nn.soft_update(self.target_net, self.online_net, rate)

    def prune(self, cfg: pruning.PruneConfig, progress: int, step: int, diag) -> list:
        events = pruning.prune_step(self.online_net, cfg, progress, step=step, diag=diag)
        pruning.mirror_masks(self.target_net, self.online_net)
        return events

    def sparsity(self) -> float:
        return pruning.realized_sparsity(self.online_net)

    def effective_params(self) -> int:
        return nn.param_count(self.online_net, effective=True)

    def checkpoint_nets(self) -> dict:
        return {"policy": self.online_net, "policy_target": self.target_net}

    def checkpoint_meta(self) -> dict:
        sched = self.policy.schedule
        return {
            "actor": self.kind,
            "action_dim": self.policy.action_dim,
            "state_dim": self.policy.eps_net.state_dim,
            "T": int(sched.T),
            "delta": [float(d) for d in sched.delta],
            "s_max": self.policy.bounds.s_max,
            "r_max": self.policy.bounds.r_max,
        }


@dataclass(frozen=True)
class EvalMetrics:
    reward_mean: float
    reward_std: float
    server_utility_mean: float
    server_utility_std: float
    device_utility_mean: float
    violation_mean: float
    n_envs: int


def evaluate(policy, ranges: EnvRanges, bounds: ActionBounds, spec: RewardSpec, n_envs: int, rng) -> EvalMetrics:
    """Deploy a policy on freshly sampled markets and report means.

    `policy` needs eval_action(state, rng, env). Environments are drawn from
    `rng` directly and action noise from per-environment child streams, so
    two policies evaluated with generators seeded alike face identical
    markets. The violation metric always includes incentive constraints,
    whatever the reward spec exempts.
    """
    if n_envs < 1:
        raise ValueError("need at least one evaluation environment")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    children = rng.spawn(n_envs)
    rewards = np.empty(n_envs)
    servers = np.empty(n_envs)
    devices = np.empty(n_envs)
    violations = np.empty(n_envs)
    for i in range(n_envs):
        env = sample_env(ranges, rng)
        state = encode_state(env, ranges)
        action = policy.eval_action(state, children[i], env=env)
        contract = decode_action(action, bounds)
        rewards[i] = compute_reward(env, contract, spec)
        servers[i] = server_utility(contract, env.profile, env.params)
        devices[i] = realized_device_utility(env, contract)
        violations[i] = check_feasibility(contract, env.profile, env.params).violation
    return EvalMetrics(
        reward_mean=float(rewards.mean()),
        reward_std=float(rewards.std()),
        server_utility_mean=float(servers.mean()),
        server_utility_std=float(servers.std()),
        device_utility_mean=float(devices.mean()),
        violation_mean=float(violations.mean()),
        n_envs=n_envs,
    )


def critic_targets(
    critics: CriticEnsemble,
    actor,
    batch: Batch,
    gamma: float,
    varsigma: float,
    rng,
    ledger: FlopLedger | None = None,
) -> np.ndarray:
    """Bootstrap targets. Terminal transitions contribute their reward only,
    so with one-step episodes no target-policy sampling happens at all."""
    y = batch.rewards.copy()
    live = ~batch.dones
    n_live = int(live.sum())
    if gamma > 0.0 and n_live > 0:
        ns = batch.next_states[live]
        actions, credit = actor.target_actions(ns, rng)
        if ledger is not None:
            eff, den = mlp_pass_flops(actor.target_net, batch=n_live)
            ledger.add("sampling", actor.passes_per_sample * eff, actor.passes_per_sample * den)
            eff, den = mlp_pass_flops(critics.q1_target, batch=n_live)
            ledger.add("critic", 2 * eff, 2 * den)
        qmin = critics.target_min(ns, actions)
        y[live] += gamma * (qmin + varsigma * credit)
    return y


def critic_update(
    critics: CriticEnsemble,
    states,
    actions,
    targets,
    lr: float,
    ledger: FlopLedger | None = None,
) -> tuple[float, float]:
    """One MSE regression step on both online critics."""
    x = np.concatenate([states, actions], axis=1)
    n = x.shape[0]
    losses = []
    for net, adam in ((critics.q1, critics.adam1), (critics.q2, critics.adam2)):
        pred, caches = nn.forward_cached(net, x)
        diff = pred[:, 0] - targets
        losses.append(float(np.mean(diff * diff)))
        upstream = (2.0 / n) * diff[:, None]
        grads, _ = nn.backward_from_cache(net, caches, upstream)
        nn.adam_step(net, grads, adam, lr)
        if ledger is not None:
            ledger.add_pass("critic", net, batch=n, backward=True)
    return losses[0], losses[1]


@dataclass
class TrainResult:
    actor: object
    critics: CriticEnsemble
    log: TrainLog
    ledger: FlopLedger
    diag: Diagnostics
    prune_events: list
    compact_policy: nn.Mlp | None


def _check_finite(step: int, **values) -> None:
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    if bad:
        raise TrainingDivergedError("non-finite quantity", step, bad)


def _build_actor(kind: str, s_dim: int, a_dim: int, bounds, cfg: TrainerConfig, rng):
    if kind == "diffusion":
        return DiffusionActor.build(s_dim, a_dim, bounds, cfg, rng)
    if kind == "gaussian":
        from .baselines import GaussianActor

        return GaussianActor.build(s_dim, a_dim, bounds, cfg, rng)
    raise ValueError(f"unknown actor kind {kind!r}")


def train(
    config: TrainerConfig,
    ranges: EnvRanges,
    reward_spec: RewardSpec,
    bounds: ActionBounds,
    actor_kind: str = "diffusion",
    scheme: str | None = None,
    prune_callback=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Run the full training loop and return the trained artifacts.

    `prune_callback(step, actor, events)` fires after every prune event,
    which is how mask-versus-compact equivalence gets audited mid-run.
    Raises TrainingDivergedError the moment any loss or reward is not finite.
    """
    ss = np.random.SeedSequence(config.seed)
    init_rng, env_rng, action_rng, buffer_rng, update_rng = (
        np.random.default_rng(s) for s in ss.spawn(5)
    )
    s_dim = state_dim(ranges)
    a_dim = action_dim(ranges)
    actor = _build_actor(actor_kind, s_dim, a_dim, bounds, config, init_rng)
    critics = make_critics(s_dim, a_dim, config.critic_hidden, init_rng)
    buffer = ReplayBuffer(config.buffer_capacity, s_dim, a_dim)

    ledger = FlopLedger()
    diag = Diagnostics()
    log = TrainLog(scheme=scheme or actor_kind, seed=config.seed, rows=[])
    prune_events: list = []
    one_step = config.episode_mode == "one_step"
    prune_cfg = config.prune if actor_kind == "diffusion" else None

    env = sample_env(ranges, env_rng)
    episode_steps = 0
    window: list[float] = []
    wall_start = time.monotonic()

    for z in range(1, config.steps + 1):
        state = encode_state(env, ranges, diag)
        if z <= config.warmup:
            action = action_rng.uniform(-1.0, 1.0, a_dim)
        else:
            action = actor.act(state, action_rng)
            eff, den = mlp_pass_flops(actor.online_net, batch=1)
            ledger.add("sampling", actor.passes_per_sample * eff, actor.passes_per_sample * den)
        reward = compute_reward(env, decode_action(action, bounds), reward_spec, diag)
        _check_finite(z, reward=reward)
        next_env = sample_env(ranges, env_rng)
        if one_step:
            done = True
        else:
            episode_steps += 1
            done = episode_steps >= config.episode_len
            if done:
                episode_steps = 0
        buffer.push(state, action, reward, encode_state(next_env, ranges, diag), done)
        env = next_env
        window.append(reward)

        if z > config.warmup:
            batch = buffer.sample(config.batch_size, buffer_rng)
            y = critic_targets(
                critics, actor, batch, config.gamma, config.varsigma, update_rng, ledger
            )
            loss1, loss2 = critic_update(
                critics, batch.states, batch.actions, y, config.lr_critic, ledger
            )
            policy_loss_val = actor.update(batch.states, critics, config.lr_actor, update_rng)
            _check_finite(z, critic1=loss1, critic2=loss2, policy=policy_loss_val)
            eff, den = mlp_pass_flops(actor.online_net, batch=config.batch_size, backward=True)
            ledger.add("policy", actor.passes_per_sample * eff, actor.passes_per_sample * den)
            eff, den = mlp_pass_flops(critics.q1, batch=config.batch_size, backward=True)
            ledger.add("critic", 2 * eff, 2 * den)
            actor.sync_targets(config.target_rate)
            critics.sync_targets(config.target_rate)

            if prune_cfg is not None and z > prune_cfg.start_step:
                progress = z - prune_cfg.start_step
                if (
                    progress % prune_cfg.frequency == 0
                    and progress <= prune_cfg.total_prunes * prune_cfg.frequency
                ):
                    events = actor.prune(prune_cfg, progress, z, diag)
                    prune_events.extend(events)
                    ledger.add(
                        "pruning",
                        2 * nn.param_count(actor.online_net, effective=True),
                        2 * nn.param_count(actor.online_net),
                    )
                    if prune_callback is not None:
                        prune_callback(z, actor, events)

        if z % config.eval_interval == 0 or z == config.steps:
            em = evaluate(
                actor, ranges, bounds, reward_spec, config.eval_envs,
                np.random.default_rng(config.eval_seed),
            )
            eff, den = mlp_pass_flops(actor.target_net, batch=config.eval_envs)
            ledger.add("sampling", actor.passes_per_sample * eff, actor.passes_per_sample * den)
            wall_ms = (
                int((time.monotonic() - wall_start) * 1000.0) if config.record_wall_time else 0
            )
            log.rows.append(
                LogRow(
                    step=z,
                    train_reward=float(np.mean(window)) if window else 0.0,
                    eval_reward=em.reward_mean,
                    server_utility=em.server_utility_mean,
                    device_utility=em.device_utility_mean,
                    sparsity=actor.sparsity() if hasattr(actor, "sparsity") else 0.0,
                    effective_params=actor.effective_params(),
                    flops=ledger.total(),
                    wall_ms=wall_ms,
                )
            )
            window = []

        if (
            checkpoint_dir is not None
            and config.checkpoint_interval > 0
            and z % config.checkpoint_interval == 0
        ):
            save_train_checkpoint(
                Path(checkpoint_dir) / f"checkpoint_step{z}.npz", actor, critics, {"step": z}
            )

    compact_policy = None
    if actor_kind == "diffusion":
        compact_policy = pruning.compact(actor.online_net)
    return TrainResult(
        actor=actor,
        critics=critics,
        log=log,
        ledger=ledger,
        diag=diag,
        prune_events=prune_events,
        compact_policy=compact_policy,
    )


def save_train_checkpoint(path, actor, critics: CriticEnsemble, extra_meta: dict | None = None) -> None:
    nets = dict(actor.checkpoint_nets())
    nets.update(
        {
            "q1": critics.q1,
            "q2": critics.q2,
            "q1_target": critics.q1_target,
            "q2_target": critics.q2_target,
        }
    )
    meta = actor.checkpoint_meta()
    meta.update(extra_meta or {})
    nn.save_checkpoint(path, nets, meta)


def load_policy(path):
    """Rebuild the deployment-ready actor from a checkpoint."""
    nets, meta = nn.load_checkpoint(path)
    bounds = ActionBounds(s_max=meta["s_max"], r_max=meta["r_max"])
    if meta["actor"] == "diffusion":
        delta = np.asarray(meta["delta"], dtype=np.float64)
        alpha = 1.0 - delta
        schedule = diffusion.NoiseSchedule(
            delta=delta, alpha=alpha, alpha_bar=np.cumprod(alpha)
        )
        def wrap(net):
            return diffusion.DiffusionPolicy(
                eps_net=diffusion.EpsNet(
                    net=net,
                    action_dim=int(meta["action_dim"]),
                    state_dim=int(meta["state_dim"]),
                    T=int(meta["T"]),
                ),
                schedule=schedule,
                bounds=bounds,
            )
        actor = DiffusionActor(wrap(nets["policy"]))
        actor.target = wrap(nets["policy_target"])
        return actor
    if meta["actor"] == "gaussian":
        from .baselines import GaussianActor

        return GaussianActor.from_checkpoint(nets, meta, bounds)
    raise ValueError(f"unknown actor kind {meta['actor']!r} in checkpoint")
