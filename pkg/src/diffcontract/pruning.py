"""Dynamic structured pruning of hidden neurons during training.

Sparsity follows a cubic ramp: after the z-th unit of pruning progress the
target fraction of removed hidden neurons is

    omega(z) = w_final - w_final * (1 - z / (N * Delta))^3,

which starts at exactly 0, ends at exactly w_final, and prunes aggressively
early while tapering off. At each event, neurons are scored by the summed
magnitude of their incoming and outgoing weights (normalized to sum to 1
across the network), and every alive neuron scoring strictly below the
threshold is masked. Masks only ever move from 1 to 0, input and output
layers are never touched, and a guard keeps at least one neuron alive per
layer. A masked network can be compacted into a genuinely smaller dense
network at any point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .metrics import Diagnostics


@dataclass(frozen=True)
class PruneConfig:
    """target_sparsity: final fraction of hidden neurons to remove.
    frequency: steps between prune events. total_prunes: number of events.
    start_step: step of the last un-pruned moment; the first event lands at
    start_step + frequency. mode "quantile" treats omega as a population
    fraction; "literal" compares normalized scores to omega directly."""

    target_sparsity: float = 0.10
    frequency: int = 1000
    total_prunes: int = 40
    start_step: int = 1000
    mode: str = "quantile"

    def __post_init__(self):
        if not (0.0 <= self.target_sparsity < 1.0):
            raise ValueError("target_sparsity must lie in [0, 1)")
        if self.frequency < 1:
            raise ValueError("frequency must be at least 1")
        if self.total_prunes < 1:
            raise ValueError("total_prunes must be at least 1")
        if self.start_step < 0:
            raise ValueError("start_step must be nonnegative")
        if self.mode not in ("quantile", "literal"):
            raise ValueError("mode must be 'quantile' or 'literal'")


@dataclass(frozen=True)
class PruneEvent:
    step: int
    layer: int
    neurons_removed: int
    realized_sparsity: float


@dataclass
class ImportanceMap:
    """Normalized neuron scores per hidden layer. Pruned neurons score 0 and
    alive scores sum to 1 across the whole network."""

    phi: list
    alive: list

    @property
    def total_neurons(self) -> int:
        return sum(len(p) for p in self.phi)

    @property
    def alive_count(self) -> int:
        return int(sum(a.sum() for a in self.alive))


def prunable_count(net: nn.Mlp) -> int:
    """Hidden neurons only; the output layer is never a pruning candidate."""
    return sum(layer.out_dim for layer in net.layers[:-1])


def realized_sparsity(net: nn.Mlp) -> float:
    total = prunable_count(net)
    if total == 0:
        return 0.0
    alive = sum(layer.alive() for layer in net.layers[:-1])
    return (total - alive) / total


def importance(net: nn.Mlp, diag: Diagnostics | None = None) -> ImportanceMap:
    """Score hidden neuron i by sum|incoming W| + sum|outgoing W|, outgoing
    restricted to alive destination neurons, then normalize globally.

    If every alive neuron scores 0 the scores fall back to uniform over the
    alive set and the event is counted.
    """
    if len(net.layers) < 2:
        raise ValueError("network has no hidden layers to score")
    raw = []
    alive = []
    for i, layer in enumerate(net.layers[:-1]):
        nxt = net.layers[i + 1]
        incoming = np.sum(np.abs(layer.W), axis=1)
        outgoing = np.abs(nxt.W).T @ nxt.mask
        score = (incoming + outgoing) * layer.mask
        raw.append(score)
        alive.append(layer.mask.astype(bool))
    total = float(sum(s.sum() for s in raw))
    n_alive = int(sum(a.sum() for a in alive))
    if total > 0:
        phi = [s / total for s in raw]
    else:
        if diag is not None:
            diag.uniform_importance_events += 1
        phi = [
            np.where(a, 1.0 / n_alive, 0.0) if n_alive > 0 else np.zeros_like(s)
            for s, a in zip(raw, alive)
        ]
    return ImportanceMap(phi=phi, alive=alive)


def sparsity_at(z: int, cfg: PruneConfig) -> float:
    """Cumulative sparsity target after z units of pruning progress."""
    if z < 0:
        raise ValueError("progress must be nonnegative")
    horizon = cfg.total_prunes * cfg.frequency
    z = min(z, horizon)
    w = cfg.target_sparsity
    return w - w * (1.0 - z / horizon) ** 3


def threshold(imp: ImportanceMap, omega: float, mode: str = "quantile") -> float:
    """Score cutoff realizing the sparsity target; neurons with phi strictly
    below it get pruned.

    Quantile mode aims the cumulative pruned count at round(omega * P) where
    P is the original prunable population; ties at the cutoff stay alive.
    Literal mode returns omega itself as the cutoff.
    """
    if not (0.0 <= omega < 1.0):
        raise ValueError("omega must lie in [0, 1)")
    if mode == "literal":
        return float(omega)
    if mode != "quantile":
        raise ValueError("mode must be 'quantile' or 'literal'")
    P = imp.total_neurons
    target = int(np.floor(omega * P + 0.5))
    already = P - imp.alive_count
    need = target - already
    if need <= 0:
        return 0.0
    values = np.sort(np.concatenate([p[a] for p, a in zip(imp.phi, imp.alive)]))
    if need >= values.size:
        return float(np.nextafter(values[-1], np.inf))
    return float(values[need])


def apply_masks(
    net: nn.Mlp,
    imp: ImportanceMap,
    cutoff: float,
    step: int = 0,
    diag: Diagnostics | None = None,
) -> list[PruneEvent]:
    """Mask every alive hidden neuron scoring strictly below the cutoff.

    Masks are monotone (a pruned neuron never returns). If a layer would lose
    its last alive neuron the layer is skipped entirely and the skip counted.
    Returns one event per layer that changed.
    """
    events = []
    for i, layer in enumerate(net.layers[:-1]):
        alive = layer.mask.astype(bool)
        doomed = alive & (imp.phi[i] < cutoff)
        removed = int(doomed.sum())
        if removed == 0:
            continue
        if removed >= int(alive.sum()):
            if diag is not None:
                diag.prune_guard_skips += 1
            continue
        layer.mask = np.where(doomed, 0.0, layer.mask)
        events.append(
            PruneEvent(
                step=step,
                layer=i,
                neurons_removed=removed,
                realized_sparsity=realized_sparsity(net),
            )
        )
    return events


def mirror_masks(target: nn.Mlp, source: nn.Mlp) -> None:
    """Copy masks so the target network prunes in lockstep with the online one."""
    if target.dims() != source.dims():
        raise ValueError("architectures do not match")
    for lt, ls in zip(target.layers, source.layers):
        lt.mask = ls.mask.copy()


def prune_step(
    net: nn.Mlp,
    cfg: PruneConfig,
    progress: int,
    step: int = 0,
    diag: Diagnostics | None = None,
) -> list[PruneEvent]:
    """One full prune event: score, derive the cutoff for the current target,
    and update masks in place."""
    imp = importance(net, diag)
    omega = sparsity_at(progress, cfg)
    cutoff = threshold(imp, omega, cfg.mode)
    return apply_masks(net, imp, cutoff, step=step, diag=diag)


def compact(net: nn.Mlp) -> nn.Mlp:
    """Drop masked neurons for real: remove their rows, and the columns they
    feed, producing a smaller all-alive network with identical outputs up to
    floating-point accumulation order."""
    keep_in = np.ones(net.in_dim, dtype=bool)
    layers = []
    for layer in net.layers:
        keep_out = layer.mask.astype(bool)
        W = layer.W[np.ix_(keep_out, keep_in)]
        b = layer.b[keep_out]
        layers.append(nn.DenseLayer(W, b, np.ones(int(keep_out.sum())), layer.activation))
        keep_in = keep_out
    return nn.Mlp(layers)
