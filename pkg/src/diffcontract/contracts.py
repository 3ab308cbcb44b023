"""Contract design between a model-building server and data-owning devices.

A device of type k holds data whose quality enters the server's valuation
through psi_k. The server posts a menu of (data quantity, reward) items, one
per type, without observing any device's true type. A menu is admissible when
every type prefers its own item to opting out (individual rationality) and to
imitating any other type (incentive compatibility).

Under complete information the server observes types directly, incentive
constraints drop, and the optimum is available in closed form. That closed
form is the calibration oracle for everything learned downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# absolute floor for feasibility comparisons, scaled by the term magnitudes
SLACK_TOL = 1e-9

# cap on the exhaustive menu search, candidates**K
_PRODUCT_LIMIT = 50_000_000


@dataclass(frozen=True)
class MarketParams:
    """Scalars shared by every device type.

    M: number of participating devices.
    rho: per-unit conversion from reward to device payoff.
    c: device cost per unit of shared data.
    c0: fixed device cost of participating at all.
    vartheta: server's monetization rate on the fairness-weighted data value.
    beta: fairness exponent in (0, 1]; lower values reward quantity more.
    """

    M: int
    rho: float
    c: float
    c0: float
    vartheta: float
    beta: float

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not (self.rho > 0):
            raise ValueError("rho must be positive")
        if not (self.c > 0):
            raise ValueError("c must be positive")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")
        if not (self.vartheta > 0):
            raise ValueError("vartheta must be positive")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")


@dataclass(frozen=True)
class TypeProfile:
    """Device types: ascending data qualities psi and their probabilities q."""

    psi: tuple
    q: tuple

    def __post_init__(self):
        psi = tuple(float(p) for p in self.psi)
        q = tuple(float(x) for x in self.q)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "q", q)
        if len(psi) < 1:
            raise ValueError("need at least one type")
        if len(psi) != len(q):
            raise ValueError("psi and q must have the same length")
        if any(p <= 0 for p in psi):
            raise ValueError("type qualities must be positive")
        if any(a > b for a, b in zip(psi, psi[1:])):
            raise ValueError("type qualities must be ascending")
        if any(x < 0 for x in q):
            raise ValueError("type probabilities must be nonnegative")
        if abs(sum(q) - 1.0) > 1e-9:
            raise ValueError("type probabilities must sum to 1")

    @property
    def K(self) -> int:
        return len(self.psi)

    def psi_array(self) -> np.ndarray:
        return np.asarray(self.psi, dtype=np.float64)

    def q_array(self) -> np.ndarray:
        return np.asarray(self.q, dtype=np.float64)


@dataclass(frozen=True)
class ContractItem:
    """One menu entry: requested data quantity s_hat and promised reward r."""

    s_hat: float
    r: float

    def __post_init__(self):
        if self.s_hat < 0:
            raise ValueError("data quantity must be nonnegative")
        if self.r < 0:
            raise ValueError("reward must be nonnegative")


@dataclass(frozen=True)
class Contract:
    items: tuple

    def __post_init__(self):
        if len(self.items) < 1:
            raise ValueError("a contract needs at least one item")

    @property
    def K(self) -> int:
        return len(self.items)

    def s_array(self) -> np.ndarray:
        return np.asarray([it.s_hat for it in self.items], dtype=np.float64)

    def r_array(self) -> np.ndarray:
        return np.asarray([it.r for it in self.items], dtype=np.float64)


def fairness(s_hat, beta: float):
    """Concave valuation of shared data, s^(1-beta) / (1-beta).

    Accepts a scalar or an array. beta = 0 reduces to the identity.
    """
    if not (0.0 <= beta < 1.0):
        raise ValueError("beta must lie in [0, 1)")
    s = np.asarray(s_hat, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("data quantity must be nonnegative")
    g = s ** (1.0 - beta) / (1.0 - beta)
    return float(g) if np.isscalar(s_hat) or getattr(s_hat, "ndim", 1) == 0 else g


def device_utility(item: ContractItem, psi: float, params: MarketParams) -> float:
    """Payoff of a type-psi device that truthfully takes `item`."""
    if psi <= 0:
        raise ValueError("psi must be positive")
    return params.rho * psi * item.r - params.c * item.s_hat - params.c0


def server_utility(contract: Contract, profile: TypeProfile, params: MarketParams) -> float:
    """Expected server payoff, M * sum_k q_k (vartheta*g(s_k) - r_k)."""
    if contract.K != profile.K:
        raise ValueError("contract and profile have different numbers of types")
    s = contract.s_array()
    r = contract.r_array()
    g = fairness(s, params.beta)
    return float(params.M * np.sum(profile.q_array() * (params.vartheta * g - r)))


@dataclass(frozen=True)
class FeasibilityReport:
    """Slacks of the admissibility constraints. Slack >= 0 means satisfied.

    ir_slack[k] is type k's payoff over opting out. ic_slack[k, n] is type k's
    gain from its own item over item n (diagonal fixed at 0). `violation` is
    the summed magnitude of every violated constraint.
    """

    ir_slack: np.ndarray
    ic_slack: np.ndarray
    monotone: bool
    violation: float

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.ir_slack >= 0) and np.all(self.ic_slack >= 0))


def check_feasibility(contract: Contract, profile: TypeProfile, params: MarketParams) -> FeasibilityReport:
    if contract.K != profile.K:
        raise ValueError("contract and profile have different numbers of types")
    s = contract.s_array()
    r = contract.r_array()
    psi = profile.psi_array()
    # net[k, n]: payoff of a type-k device taking item n, before the fixed cost
    net = params.rho * psi[:, None] * r[None, :] - params.c * s[None, :]
    own = np.diag(net)
    ir = own - params.c0
    ic = own[:, None] - net
    np.fill_diagonal(ic, 0.0)
    monotone = bool(np.all(np.diff(s) >= 0) and np.all(np.diff(r) >= 0))
    violation = float(np.sum(np.maximum(0.0, -ir)) + np.sum(np.maximum(0.0, -ic)))
    return FeasibilityReport(ir_slack=ir, ic_slack=ic, monotone=monotone, violation=violation)


def ir_violation(contract: Contract, profile: TypeProfile, params: MarketParams) -> float:
    """Summed magnitude of individual-rationality violations only."""
    rep = check_feasibility(contract, profile, params)
    return float(np.sum(np.maximum(0.0, -rep.ir_slack)))


def solve_complete_info(profile: TypeProfile, params: MarketParams) -> Contract:
    """Closed-form optimum when the server observes types.

    Pointwise first-order condition gives s_k = (vartheta*rho*psi_k / c)^(1/beta)
    and the reward is set so each participation constraint binds exactly:
    r_k = (c*s_k + c0) / (rho*psi_k). Requires beta > 0; at beta = 0 the
    objective is linear in s and the problem has no interior optimum.
    """
    if params.beta <= 0.0:
        raise ValueError("complete-information optimum needs beta in (0, 1)")
    psi = profile.psi_array()
    s = (params.vartheta * params.rho * psi / params.c) ** (1.0 / params.beta)
    r = (params.c * s + params.c0) / (params.rho * psi)
    return Contract(tuple(ContractItem(float(si), float(ri)) for si, ri in zip(s, r)))


@dataclass(frozen=True)
class BruteForceResult:
    contract: Contract | None
    utility: float
    feasible: bool


def _slack_tol(payoff_scale: np.ndarray) -> np.ndarray:
    return SLACK_TOL * np.maximum(1.0, payoff_scale)


def brute_force_search(
    profile: TypeProfile,
    params: MarketParams,
    s_grid,
    r_grid,
    include_ic: bool = True,
) -> BruteForceResult:
    """Exhaustive search for the best admissible menu on a finite grid.

    Every type draws its item from the same s_grid x r_grid candidate set.
    Constraints are checked with a small magnitude-scaled tolerance so a
    candidate that satisfies them exactly (up to rounding) counts as feasible.
    Ties in utility resolve to the lexicographically smallest grid indices.
    With include_ic=False the types decouple and only participation
    constraints are enforced, which keeps the search linear in grid size.
    """
    s_grid = np.asarray(s_grid, dtype=np.float64)
    r_grid = np.asarray(r_grid, dtype=np.float64)
    if s_grid.ndim != 1 or r_grid.ndim != 1 or s_grid.size < 1 or r_grid.size < 1:
        raise ValueError("grids must be nonempty 1-D arrays")
    if np.any(s_grid < 0) or np.any(r_grid < 0):
        raise ValueError("grids must be nonnegative")
    if np.any(np.diff(s_grid) < 0) or np.any(np.diff(r_grid) < 0):
        raise ValueError("grids must be sorted ascending")

    K = profile.K
    psi = profile.psi_array()
    q = profile.q_array()

    # candidate axes, lexicographic in (s index, r index)
    S = np.repeat(s_grid, r_grid.size)
    R = np.tile(r_grid, s_grid.size)
    C = S.size
    g = fairness(S, params.beta)

    # per-type arrays over candidates
    gain = params.rho * psi[:, None] * R[None, :] - params.c * S[None, :]  # [K, C]
    ir_ok = gain - params.c0 >= -_slack_tol(np.abs(gain) + params.c0)
    util = q[:, None] * (params.vartheta * g[None, :] - R[None, :])  # [K, C]

    if not include_ic or K == 1:
        items = []
        total = 0.0
        for k in range(K):
            masked = np.where(ir_ok[k], util[k], -np.inf)
            best = int(np.argmax(masked))
            if not np.isfinite(masked[best]):
                return BruteForceResult(contract=None, utility=float("-inf"), feasible=False)
            items.append(ContractItem(float(S[best]), float(R[best])))
            total += float(util[k, best])
        return BruteForceResult(
            contract=Contract(tuple(items)), utility=float(params.M * total), feasible=True
        )

    if C**K > _PRODUCT_LIMIT:
        raise ValueError("grid too large for the exhaustive incentive-compatible search")

    # utility of the full menu is separable, so broadcast-add over K axes
    total = np.zeros((1,) * K, dtype=np.float64)
    for k in range(K):
        shape = [1] * K
        shape[k] = C
        total = total + util[k].reshape(shape)

    feasible = np.ones((1,) * K, dtype=bool)
    for k in range(K):
        shape = [1] * K
        shape[k] = C
        feasible = feasible & ir_ok[k].reshape(shape)
    for k in range(K):
        gk = gain[k]
        tol = _slack_tol(np.abs(gk)[:, None] + np.abs(gk)[None, :])
        ok = gk[:, None] - gk[None, :] >= -tol  # [own item, other item]
        for n in range(K):
            if n == k:
                continue
            # type k must prefer its own item (axis k) to item n (axis n)
            arr = ok if k < n else ok.T
            target = [1] * K
            target[min(k, n)] = C
            target[max(k, n)] = C
            feasible = feasible & arr.reshape(target)

    score = np.where(feasible, total, -np.inf)
    flat = int(np.argmax(score))
    if not np.isfinite(score.reshape(-1)[flat]):
        return BruteForceResult(contract=None, utility=float("-inf"), feasible=False)
    idx = np.unravel_index(flat, score.shape)
    items = tuple(ContractItem(float(S[i]), float(R[i])) for i in idx)
    best_total = float(params.M * score.reshape(-1)[flat])
    return BruteForceResult(contract=Contract(items), utility=best_total, feasible=True)
