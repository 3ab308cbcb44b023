"""Market environments for contract learning.

Each episode the agent observes one sampled market (costs, monetization rate,
type mix), posts a full menu as a flat action in [-1, 1]^(2K), and collects a
reward equal to the server's expected utility minus a penalty for violated
admissibility constraints, normalized by the complete-information optimum of
that same market. A reward of 1 therefore means "matched the oracle that
observes types", and rewards are bounded above by 1 for any penalty weight
at least 1 under the default market ranges.

M and K are fixed within a run, so the state excludes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contracts import (
    Contract,
    ContractItem,
    MarketParams,
    TypeProfile,
    check_feasibility,
    device_utility,
    server_utility,
    solve_complete_info,
)
from .metrics import Diagnostics


@dataclass(frozen=True)
class EnvRanges:
    """Sampling ranges for market parameters. Fixed scalars sample as-is."""

    psi_ranges: tuple = ((50.0, 100.0), (200.0, 250.0))
    c_range: tuple = (25.0, 35.0)
    vartheta_range: tuple = (10.0, 15.0)
    rho: float = 0.6
    c0: float = 0.01
    beta: float = 0.5
    M: int = 10
    dirichlet_alpha: float = 1.0

    def __post_init__(self):
        if len(self.psi_ranges) < 1:
            raise ValueError("need at least one type range")
        for lo, hi in self.psi_ranges:
            if not (0 < lo <= hi):
                raise ValueError("psi ranges must satisfy 0 < lo <= hi")
        for lo, hi in (self.c_range, self.vartheta_range):
            if not (0 < lo <= hi):
                raise ValueError("ranges must satisfy 0 < lo <= hi")
        if not (self.rho > 0):
            raise ValueError("rho must be positive")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not (self.dirichlet_alpha > 0):
            raise ValueError("dirichlet_alpha must be positive")

    @property
    def K(self) -> int:
        return len(self.psi_ranges)


@dataclass(frozen=True)
class EnvSample:
    """One concrete market: a type profile plus shared scalars."""

    profile: TypeProfile
    params: MarketParams


def state_dim(ranges: EnvRanges) -> int:
    # c, c0, vartheta normalized, then q and normalized psi per type
    return 3 + 2 * ranges.K


def sample_env(ranges: EnvRanges, rng: np.random.Generator) -> EnvSample:
    """Draw a market: psi uniform per type range (sorted), q Dirichlet,
    c and vartheta uniform."""
    psi = np.array([rng.uniform(lo, hi) for lo, hi in ranges.psi_ranges])
    psi = np.sort(psi)
    q = rng.dirichlet(np.full(ranges.K, ranges.dirichlet_alpha))
    c = float(rng.uniform(*ranges.c_range))
    vartheta = float(rng.uniform(*ranges.vartheta_range))
    profile = TypeProfile(psi=tuple(psi), q=tuple(q))
    params = MarketParams(
        M=ranges.M, rho=ranges.rho, c=c, c0=ranges.c0, vartheta=vartheta, beta=ranges.beta
    )
    return EnvSample(profile=profile, params=params)


def _norm(value: float, lo: float, hi: float, diag: Diagnostics | None) -> float:
    if hi <= lo:
        return 0.5  # degenerate range carries no information
    x = (value - lo) / (hi - lo)
    if x < 0.0 or x > 1.0:
        if diag is not None:
            diag.encode_clips += 1
        x = min(1.0, max(0.0, x))
    return x


def encode_state(env: EnvSample, ranges: EnvRanges, diag: Diagnostics | None = None) -> np.ndarray:
    """Min-max normalized observation [c, c0, vartheta, q_1..K, psi_1..K].

    Out-of-range values clip to [0, 1] and are counted in the diagnostics.
    Type probabilities pass through unchanged.
    """
    if env.profile.K != ranges.K:
        raise ValueError("environment and ranges disagree on the number of types")
    out = np.empty(state_dim(ranges))
    out[0] = _norm(env.params.c, *ranges.c_range, diag)
    out[1] = _norm(env.params.c0, ranges.c0, ranges.c0, diag)
    out[2] = _norm(env.params.vartheta, *ranges.vartheta_range, diag)
    K = ranges.K
    out[3 : 3 + K] = env.profile.q
    for k, (lo, hi) in enumerate(ranges.psi_ranges):
        out[3 + K + k] = _norm(env.profile.psi[k], lo, hi, diag)
    return out


def decode_state(state: np.ndarray, ranges: EnvRanges) -> EnvSample:
    """Inverse of encode_state for in-range markets (affine unscaling)."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (state_dim(ranges),):
        raise ValueError("state has the wrong length for these ranges")

    def un(x, lo, hi):
        return lo if hi <= lo else lo + x * (hi - lo)

    K = ranges.K
    c = un(state[0], *ranges.c_range)
    vartheta = un(state[2], *ranges.vartheta_range)
    q = state[3 : 3 + K]
    psi = tuple(un(state[3 + K + k], *ranges.psi_ranges[k]) for k in range(K))
    profile = TypeProfile(psi=psi, q=tuple(q))
    params = MarketParams(
        M=ranges.M, rho=ranges.rho, c=c, c0=ranges.c0, vartheta=vartheta, beta=ranges.beta
    )
    return EnvSample(profile=profile, params=params)


@dataclass(frozen=True)
class ActionBounds:
    """Physical scale of the action box. a = -1 maps to 0, a = +1 to the max."""

    s_max: float = 10_000.0
    r_max: float = 2_000.0

    def __post_init__(self):
        if not (self.s_max > 0 and self.r_max > 0):
            raise ValueError("action bounds must be positive")


def action_dim(ranges: EnvRanges) -> int:
    return 2 * ranges.K


def decode_action(action: np.ndarray, bounds: ActionBounds) -> Contract:
    """Map [-1, 1]^(2K) to a menu, (s_k, r_k) interleaved per type.

    Values outside the box clip to it first, so any real vector decodes.
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.ndim != 1 or a.size < 2 or a.size % 2 != 0:
        raise ValueError("action must be a flat vector of even length")
    s = (a[0::2] + 1.0) / 2.0 * bounds.s_max
    r = (a[1::2] + 1.0) / 2.0 * bounds.r_max
    return Contract(tuple(ContractItem(float(si), float(ri)) for si, ri in zip(s, r)))


def encode_contract(contract: Contract, bounds: ActionBounds) -> np.ndarray:
    """Inverse of decode_action; menus beyond the bounds clip to the box edge."""
    a = np.empty(2 * contract.K)
    a[0::2] = contract.s_array() / bounds.s_max * 2.0 - 1.0
    a[1::2] = contract.r_array() / bounds.r_max * 2.0 - 1.0
    return np.clip(a, -1.0, 1.0)


@dataclass(frozen=True)
class RewardSpec:
    """Reward shaping: (utility - penalty_weight * violation) / normalizer.

    normalizer "complete_info" divides by the closed-form optimum of the
    sampled market; "constant" divides by kappa. If the complete-information
    utility is not strictly positive the constant fallback is used and the
    event is counted. ic_exempt drops incentive constraints from the penalty,
    which matches schemes that observe types directly.
    """

    penalty_weight: float = 1.0
    normalizer: str = "complete_info"
    kappa: float = 1.0
    ic_exempt: bool = False

    def __post_init__(self):
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.normalizer not in ("complete_info", "constant"):
            raise ValueError("normalizer must be 'complete_info' or 'constant'")
        if not (self.kappa > 0):
            raise ValueError("kappa must be positive")


def complete_info_utility(env: EnvSample) -> float:
    return server_utility(solve_complete_info(env.profile, env.params), env.profile, env.params)


def compute_reward(
    env: EnvSample,
    contract: Contract,
    spec: RewardSpec,
    diag: Diagnostics | None = None,
) -> float:
    u = server_utility(contract, env.profile, env.params)
    rep = check_feasibility(contract, env.profile, env.params)
    if spec.ic_exempt:
        violation = float(np.sum(np.maximum(0.0, -rep.ir_slack)))
    else:
        violation = rep.violation
    norm = spec.kappa
    if spec.normalizer == "complete_info":
        u_ci = complete_info_utility(env)
        if u_ci > 0:
            norm = u_ci
        elif diag is not None:
            diag.normalizer_fallbacks += 1
    return (u - spec.penalty_weight * violation) / norm


def realized_device_utility(env: EnvSample, contract: Contract) -> float:
    """Expected per-device payoff under truthful selection, sum_k q_k u_k."""
    if contract.K != env.profile.K:
        raise ValueError("contract and profile have different numbers of types")
    return float(
        sum(
            qk * device_utility(item, psi_k, env.params)
            for qk, psi_k, item in zip(env.profile.q, env.profile.psi, contract.items)
        )
    )


def step(
    env: EnvSample,
    action: np.ndarray,
    ranges: EnvRanges,
    bounds: ActionBounds,
    spec: RewardSpec,
    rng: np.random.Generator,
    terminal: bool = True,
    diag: Diagnostics | None = None,
):
    """Apply a menu to the current market, then draw a fresh market.

    Returns (next_env, reward, done). With terminal=True every step ends its
    episode, which makes the critic target exactly the observed reward.
    """
    contract = decode_action(action, bounds)
    reward = compute_reward(env, contract, spec, diag)
    return sample_env(ranges, rng), reward, terminal
