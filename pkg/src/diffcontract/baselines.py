"""Comparison schemes: random menus, the complete-information oracle played
as a policy, and a conventional tanh-squashed Gaussian SAC actor.

All three run through the same evaluate() path as the diffusion agent, so
every scheme faces identical markets and identical metric definitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .contracts import solve_complete_info
from .env import ActionBounds, encode_contract
from .sac import CriticEnsemble, TrainerConfig, TrainResult, train

_LOGSTD_MIN = -20.0
_LOGSTD_MAX = 2.0
_SQUASH_EPS = 1e-6


def random_action(rng: np.random.Generator, a_dim: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, a_dim)


class RandomPolicy:
    """Uniform menus over the action box; the floor every learner must beat."""

    kind = "random"

    def __init__(self, a_dim: int):
        if a_dim < 2 or a_dim % 2 != 0:
            raise ValueError("action dimension must be a positive even number")
        self.a_dim = a_dim

    def act(self, state, rng) -> np.ndarray:
        return random_action(rng, self.a_dim)

    def eval_action(self, state, rng, env=None) -> np.ndarray:
        return random_action(rng, self.a_dim)


class CompleteInfoPolicy:
    """Plays the closed-form optimum of the actual sampled market.

    Requires the raw environment, not just the observation: it is the
    upper reference that sees through the information asymmetry. Menus
    beyond the action bounds clip, so bounds should be sized generously.
    """

    kind = "complete_info"

    def __init__(self, bounds: ActionBounds):
        self.bounds = bounds

    def eval_action(self, state, rng, env=None) -> np.ndarray:
        if env is None:
            raise ValueError("the complete-information policy needs the raw environment")
        contract = solve_complete_info(env.profile, env.params)
        return encode_contract(contract, self.bounds)

    act = eval_action


class GaussianActor:
    """Tanh-squashed Gaussian policy head trained by the same SAC loop.

    The network emits [mean, log-std] per action dimension; log-std clamps to
    [-20, 2]. With varsigma = 0 and mean evaluation this degenerates to a
    deterministic actor-critic.
    """

    kind = "gaussian"

    def __init__(self, net: nn.Mlp, a_dim: int, bounds: ActionBounds, varsigma: float = 0.0):
        if net.out_dim != 2 * a_dim:
            raise ValueError("network must emit mean and log-std per action dim")
        self.net = net
        self.target = net.copy()
        self.a_dim = a_dim
        self.bounds = bounds
        self.varsigma = varsigma
        self.adam = nn.AdamState.for_net(net)

    @classmethod
    def build(cls, s_dim: int, a_dim: int, bounds: ActionBounds, cfg: TrainerConfig, rng):
        net = nn.create_mlp(
            [s_dim, *cfg.actor_hidden, 2 * a_dim], rng, final_init_scale=1e-3
        )
        return cls(net, a_dim, bounds, varsigma=cfg.varsigma)

    @classmethod
    def from_checkpoint(cls, nets: dict, meta: dict, bounds: ActionBounds):
        actor = cls(nets["policy"], int(meta["action_dim"]), bounds)
        actor.target = nets["policy_target"]
        return actor

    @property
    def online_net(self) -> nn.Mlp:
        return self.net

    @property
    def target_net(self) -> nn.Mlp:
        return self.target

    @property
    def passes_per_sample(self) -> int:
        return 1

    @staticmethod
    def _split(out: np.ndarray, a_dim: int):
        mean = out[:, :a_dim]
        logstd = np.clip(out[:, a_dim:], _LOGSTD_MIN, _LOGSTD_MAX)
        return mean, logstd, out[:, a_dim:]

    def _sample(self, net: nn.Mlp, states: np.ndarray, rng):
        out = nn.forward_masked(net, states)
        mean, logstd, _ = self._split(out, self.a_dim)
        eps = rng.standard_normal(mean.shape)
        u = mean + np.exp(logstd) * eps
        a = np.tanh(u)
        logp = np.sum(
            -0.5 * eps * eps - 0.5 * np.log(2.0 * np.pi) - logstd
            - np.log(1.0 - a * a + _SQUASH_EPS),
            axis=1,
        )
        return a, logp

    def act(self, state, rng) -> np.ndarray:
        a, _ = self._sample(self.net, np.asarray(state)[None, :], rng)
        return a[0]

    def eval_action(self, state, rng, env=None) -> np.ndarray:
        out = nn.forward_masked(self.target, np.asarray(state)[None, :])
        mean, _, _ = self._split(out, self.a_dim)
        return np.tanh(mean[0])

    def target_actions(self, states, rng):
        a, logp = self._sample(self.target, states, rng)
        return a, -logp

    def loss_and_grads(self, states, critics: CriticEnsemble, varsigma: float, rng):
        """mean(varsigma*logp - minQ) and its parameter gradients, with the
        Gaussian draws made once and held fixed (reparameterization)."""
        n = states.shape[0]
        out, caches = nn.forward_cached(self.net, states)
        mean, logstd, raw_logstd = self._split(out, self.a_dim)
        std = np.exp(logstd)
        eps = rng.standard_normal(mean.shape)
        u = mean + std * eps
        a = np.tanh(u)
        t = 1.0 - a * a
        D = t + _SQUASH_EPS

        q, dq_da = critics.value_and_action_grad(states, a)
        logp = np.sum(
            -0.5 * eps * eps - 0.5 * np.log(2.0 * np.pi) - logstd - np.log(D), axis=1
        )
        loss = float(np.mean(varsigma * logp - q))

        # d(logp)/du comes only from the squash correction; the Gaussian part
        # is constant in the parameters once eps is frozen
        dlogp_du = 2.0 * a * t / D
        du = (varsigma * dlogp_du - dq_da * t) / n
        dmean = du
        dlogstd = du * std * eps + (varsigma / n) * (-1.0)
        # clamp passes no gradient where it is active
        active = (raw_logstd > _LOGSTD_MIN) & (raw_logstd < _LOGSTD_MAX)
        dlogstd = dlogstd * active
        upstream = np.concatenate([dmean, dlogstd], axis=1)
        grads, _ = nn.backward_from_cache(self.net, caches, upstream)
        return loss, grads

    def update(self, states, critics: CriticEnsemble, lr: float, rng) -> float:
        loss, grads = self.loss_and_grads(states, critics, self.varsigma, rng)
        nn.adam_step(self.net, grads, self.adam, lr)
        return loss

    def sync_targets(self, rate: float) -> None:
        nn.soft_update(self.target, self.net, rate)

    def sparsity(self) -> float:
        return 0.0

    def effective_params(self) -> int:
        return nn.param_count(self.net, effective=True)

    def checkpoint_nets(self) -> dict:
        return {"policy": self.net, "policy_target": self.target}

    def checkpoint_meta(self) -> dict:
        return {
            "actor": self.kind,
            "action_dim": self.a_dim,
            "state_dim": self.net.in_dim,
            "s_max": self.bounds.s_max,
            "r_max": self.bounds.r_max,
        }


def train_gaussian_sac(config: TrainerConfig, ranges, reward_spec, bounds) -> TrainResult:
    """The conventional SAC baseline under the identical training protocol."""
    return train(
        config, ranges, reward_spec, bounds, actor_kind="gaussian", scheme="gaussian_sac"
    )
