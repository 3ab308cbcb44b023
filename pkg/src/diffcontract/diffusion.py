"""Conditional denoising diffusion policy over the action box.

Actions are generated by reversing a fixed forward-noising process. With
per-step noise fractions delta_t in (0, 1), alpha_t = 1 - delta_t and
alpha_bar_t = prod_{j<=t} alpha_j, the learned network eps(x_t, e, t)
predicts the noise component of x_t and the reverse update is

    x_{t-1} = (x_t - delta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)
              + sqrt(delta_t) * n,   n ~ N(0, I),

with no noise injected at the final step t = 1. Only the terminal x_0 is
clipped to the action box. The whole chain is differentiable for fixed noise
draws, so a critic's action-gradient can be pushed back through every
denoising step to the network parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .env import ActionBounds
from .metrics import Diagnostics

# variance floor for the terminal-step density in the entropy estimate
_ENTROPY_VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """delta[t-1], alpha[t-1], alpha_bar[t-1] hold the step-t quantities."""

    delta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.delta)


def build_schedule(T: int, delta_lo: float, delta_hi: float, kind: str = "constant") -> NoiseSchedule:
    """Constant or linearly interpolated noise fractions over T steps."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not (0.0 < delta_lo < 1.0) or not (0.0 < delta_hi < 1.0):
        raise ValueError("noise fractions must lie in (0, 1)")
    if delta_lo > delta_hi:
        raise ValueError("delta_lo must not exceed delta_hi")
    if kind == "constant":
        delta = np.full(T, float(delta_lo))
    elif kind == "linear":
        delta = np.linspace(delta_lo, delta_hi, T)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - delta
    return NoiseSchedule(delta=delta, alpha=alpha, alpha_bar=np.cumprod(alpha))


@dataclass
class EpsNet:
    """Noise-prediction network. Input is [x_t, state, onehot(t)] concatenated."""

    net: nn.Mlp
    action_dim: int
    state_dim: int
    T: int

    def inputs(self, x: np.ndarray, states: np.ndarray, t: int) -> np.ndarray:
        if not (1 <= t <= self.T):
            raise ValueError(f"step index {t} outside 1..{self.T}")
        n = x.shape[0]
        onehot = np.zeros((n, self.T))
        onehot[:, t - 1] = 1.0
        return np.concatenate([x, states, onehot], axis=1)

    def forward(self, x: np.ndarray, states: np.ndarray, t: int) -> np.ndarray:
        return nn.forward_masked(self.net, self.inputs(x, states, t))


def make_eps_net(
    action_dim: int,
    state_dim: int,
    T: int,
    hidden: tuple,
    rng: np.random.Generator,
    final_init_scale: float | None = 1e-3,
) -> EpsNet:
    dims = [action_dim + state_dim + T, *hidden, action_dim]
    net = nn.create_mlp(dims, rng, final_init_scale=final_init_scale)
    return EpsNet(net=net, action_dim=action_dim, state_dim=state_dim, T=T)


@dataclass
class DiffusionPolicy:
    eps_net: EpsNet
    schedule: NoiseSchedule
    bounds: ActionBounds

    def __post_init__(self):
        if self.eps_net.T != self.schedule.T:
            raise ValueError("network and schedule disagree on T")

    @property
    def action_dim(self) -> int:
        return self.eps_net.action_dim

    def copy(self) -> "DiffusionPolicy":
        eps = EpsNet(
            net=self.eps_net.net.copy(),
            action_dim=self.eps_net.action_dim,
            state_dim=self.eps_net.state_dim,
            T=self.eps_net.T,
        )
        return DiffusionPolicy(eps_net=eps, schedule=self.schedule, bounds=self.bounds)


def posterior_mean(policy: DiffusionPolicy, x_t: np.ndarray, states: np.ndarray, t: int) -> np.ndarray:
    """Mean of the reverse kernel at step t (the reverse update without noise)."""
    sched = policy.schedule
    if not (1 <= t <= sched.T):
        raise ValueError(f"step index {t} outside 1..{sched.T}")
    eps = policy.eps_net.forward(x_t, states, t)
    c = sched.delta[t - 1] / np.sqrt(1.0 - sched.alpha_bar[t - 1])
    return (x_t - c * eps) / np.sqrt(sched.alpha[t - 1])


def _reverse_chain(policy: DiffusionPolicy, states: np.ndarray, rng: np.random.Generator, record: bool = False):
    """Run the full reverse chain for a batch of states.

    Returns (actions, trace, records). The trace lists x_T .. x_0 with x_0
    before clipping. When record=True each step keeps the forward caches
    needed to backpropagate through the chain.
    """
    sched = policy.schedule
    A = policy.action_dim
    n = states.shape[0]
    x = rng.standard_normal((n, A))
    trace = [x]
    records = []
    for t in range(sched.T, 0, -1):
        inp = policy.eps_net.inputs(x, states, t)
        if record:
            eps, caches = nn.forward_cached(policy.eps_net.net, inp)
            records.append((t, caches))
        else:
            eps = nn.forward_masked(policy.eps_net.net, inp)
        c = sched.delta[t - 1] / np.sqrt(1.0 - sched.alpha_bar[t - 1])
        mu = (x - c * eps) / np.sqrt(sched.alpha[t - 1])
        if t > 1:
            x = mu + np.sqrt(sched.delta[t - 1]) * rng.standard_normal((n, A))
        else:
            x = mu
        trace.append(x)
    actions = np.clip(x, -1.0, 1.0)
    return actions, trace, records


def reverse_sample(policy: DiffusionPolicy, state: np.ndarray, rng: np.random.Generator):
    """Sample one action for one state. Returns (action, trace of x_T..x_0)."""
    state = np.asarray(state, dtype=np.float64)
    actions, trace, _ = _reverse_chain(policy, state[None, :], rng, record=False)
    return actions[0], [x[0] for x in trace]


def sample_actions(policy: DiffusionPolicy, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Batched action sampling, one chain per row of `states`."""
    actions, _, _ = _reverse_chain(policy, states, rng, record=False)
    return actions


def policy_loss(policy: DiffusionPolicy, critic, states: np.ndarray, rng: np.random.Generator):
    """Loss -mean Q(e, x_0) and its gradient w.r.t. the network parameters.

    `critic` must expose value_and_action_grad(states, actions) -> (q, dq/da).
    Noise draws are made once and held fixed, so the chain is a deterministic
    differentiable map for this evaluation (the reparameterization trick).
    The clip into the action box passes gradient only where it is inactive.
    """
    sched = policy.schedule
    A = policy.action_dim
    n = states.shape[0]
    actions, trace, records = _reverse_chain(policy, states, rng, record=True)
    q, dq_da = critic.value_and_action_grad(states, actions)
    loss = -float(np.mean(q))

    x0 = trace[-1]
    dx = (-dq_da / n) * (np.abs(x0) < 1.0)
    grads = nn.zero_grads(policy.eps_net.net)
    # records run t = T..1; walk them back from the terminal step
    for t, caches in reversed(records):
        c = sched.delta[t - 1] / np.sqrt(1.0 - sched.alpha_bar[t - 1])
        inv = 1.0 / np.sqrt(sched.alpha[t - 1])
        # x_{t-1} = (x_t - c * eps(x_t)) * inv + const
        d_eps = dx * (-c * inv)
        g, d_inp = nn.backward_from_cache(policy.eps_net.net, caches, d_eps)
        nn.accumulate_grads(grads, g)
        dx = dx * inv + d_inp[:, :A]
    return loss, grads


def entropy_bonus(
    policy: DiffusionPolicy,
    state: np.ndarray,
    samples: int,
    rng: np.random.Generator,
    diag: Diagnostics | None = None,
) -> float:
    """Monte Carlo estimate of the terminal-step differential entropy.

    Draws x_0 from the final reverse kernel N(mu_1, delta_1 I) and averages
    -log density. The variance is floored at 1e-6 to keep the density finite
    for near-deterministic schedules; hitting the floor is counted.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    sched = policy.schedule
    A = policy.action_dim
    states = np.tile(np.asarray(state, dtype=np.float64)[None, :], (samples, 1))
    x = rng.standard_normal((samples, A))
    for t in range(sched.T, 1, -1):
        mu = posterior_mean(policy, x, states, t)
        x = mu + np.sqrt(sched.delta[t - 1]) * rng.standard_normal((samples, A))
    mu1 = posterior_mean(policy, x, states, 1)
    var = sched.delta[0]
    if var < _ENTROPY_VAR_FLOOR:
        var = _ENTROPY_VAR_FLOOR
        if diag is not None:
            diag.entropy_floor_hits += 1
    x0 = mu1 + np.sqrt(var) * rng.standard_normal((samples, A))
    neg_logp = 0.5 * A * np.log(2.0 * np.pi * var) + np.sum((x0 - mu1) ** 2, axis=1) / (2.0 * var)
    return float(np.mean(neg_logp))


def schedule_entropy(schedule: NoiseSchedule, action_dim: int) -> float:
    """Closed-form entropy of the terminal reverse kernel, used as the
    temperature target term for the diffusion actor."""
    var = max(schedule.delta[0], _ENTROPY_VAR_FLOOR)
    return 0.5 * action_dim * (np.log(2.0 * np.pi * var) + 1.0)
