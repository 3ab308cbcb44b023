"""Cost accounting and result emission.

FLOP counts follow a fixed convention: a dense layer forward pass over one
input costs 2*in_dim*out_dim + out_dim (one multiply and one add per weight,
one add per bias), a backward pass costs twice the forward pass, and
elementwise bookkeeping (optimizer moments, soft updates, activations) is
excluded. Counts are tracked both for the masked network that actually ran
("effective") and for the same architecture with no neurons removed
("dense"), so pruned and unpruned cost can be compared on one run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "scheme",
    "seed",
    "step",
    "train_reward",
    "eval_reward",
    "server_utility",
    "device_utility",
    "sparsity",
    "effective_params",
    "flops",
    "wall_ms",
)

PHASES = ("sampling", "critic", "policy", "pruning")


@dataclass
class Diagnostics:
    """Counters for conditions that are tolerated but worth surfacing."""

    encode_clips: int = 0
    normalizer_fallbacks: int = 0
    entropy_floor_hits: int = 0
    uniform_importance_events: int = 0
    prune_guard_skips: int = 0
    degenerate_layers: int = 0

    def as_dict(self) -> dict:
        return {
            "encode_clips": self.encode_clips,
            "normalizer_fallbacks": self.normalizer_fallbacks,
            "entropy_floor_hits": self.entropy_floor_hits,
            "uniform_importance_events": self.uniform_importance_events,
            "prune_guard_skips": self.prune_guard_skips,
            "degenerate_layers": self.degenerate_layers,
        }


def flops_dense(in_dim: int, out_dim: int, backward: bool = False) -> int:
    """FLOPs of one dense-layer pass on a single input under the convention above."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("layer dimensions must be at least 1")
    fwd = 2 * in_dim * out_dim + out_dim
    return 2 * fwd if backward else fwd


def _layer_flops(in_dim: int, out_dim: int) -> int:
    # internal variant that tolerates zero alive neurons
    return 2 * in_dim * out_dim + out_dim


def mlp_pass_flops(net, batch: int = 1, backward: bool = False) -> tuple[int, int]:
    """(effective, dense) FLOPs of one forward (or forward+backward) pass.

    Effective counts use alive neuron counts per layer; dense counts ignore
    masks. `net` only needs `.layers` with `.W` and `.mask` attributes.
    """
    if batch < 0:
        raise ValueError("batch must be nonnegative")
    eff = 0
    dense = 0
    in_alive = net.layers[0].W.shape[1]
    in_total = in_alive
    for layer in net.layers:
        out_total = layer.W.shape[0]
        out_alive = int(layer.mask.sum())
        eff += _layer_flops(in_alive, out_alive)
        dense += _layer_flops(in_total, out_total)
        in_alive = out_alive
        in_total = out_total
    scale = batch * (3 if backward else 1)
    return eff * scale, dense * scale


@dataclass
class FlopLedger:
    """Per-phase FLOP totals, effective and dense-equivalent."""

    effective: dict = field(default_factory=lambda: {p: 0 for p in PHASES})
    dense: dict = field(default_factory=lambda: {p: 0 for p in PHASES})

    def add(self, phase: str, effective: int, dense: int | None = None) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self.effective[phase] += int(effective)
        self.dense[phase] += int(effective if dense is None else dense)

    def add_pass(self, phase: str, net, batch: int = 1, backward: bool = False) -> None:
        eff, den = mlp_pass_flops(net, batch=batch, backward=backward)
        self.add(phase, eff, den)

    def total(self) -> int:
        return sum(self.effective.values())

    def total_dense(self) -> int:
        return sum(self.dense.values())

    def actor_total(self) -> int:
        """All actor-network passes: sampling chains plus policy updates."""
        return self.effective["sampling"] + self.effective["policy"]

    def actor_total_dense(self) -> int:
        return self.dense["sampling"] + self.dense["policy"]

    def as_dict(self) -> dict:
        return {
            "effective": dict(self.effective),
            "dense": dict(self.dense),
            "total": self.total(),
            "total_dense": self.total_dense(),
        }


@dataclass(frozen=True)
class EnergyProxy:
    """Hardware energy model for converting FLOPs to kWh and grams of CO2.

    Both defaults are configurable placeholders, not measurements of any
    particular device. Swap in figures for your own hardware and grid before
    quoting absolute numbers; only ratios between runs are meaningful under
    the defaults.
    """

    joules_per_flop: float = 1e-11
    grams_co2_per_kwh: float = 400.0

    def __post_init__(self):
        if not (self.joules_per_flop > 0):
            raise ValueError("joules_per_flop must be positive")
        if not (self.grams_co2_per_kwh > 0):
            raise ValueError("grams_co2_per_kwh must be positive")


def energy_report(ledger: FlopLedger, proxy: EnergyProxy) -> dict:
    """Energy and emission proxies plus the pruned to unpruned FLOP ratio."""
    total = ledger.total()
    dense = ledger.total_dense()
    kwh = total * proxy.joules_per_flop / 3.6e6
    return {
        "flops": total,
        "flops_dense": dense,
        "kwh": kwh,
        "g_co2": kwh * proxy.grams_co2_per_kwh,
        "flop_ratio_vs_dense": (total / dense) if dense > 0 else 1.0,
        "by_phase": ledger.as_dict(),
    }


@dataclass(frozen=True)
class LogRow:
    step: int
    train_reward: float
    eval_reward: float
    server_utility: float
    device_utility: float
    sparsity: float
    effective_params: int
    flops: int
    wall_ms: int


@dataclass
class TrainLog:
    scheme: str
    seed: int
    rows: list = field(default_factory=list)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("booleans have no place in the log schema")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.9g" % float(value)


def write_csv(log: TrainLog, path) -> None:
    """Write a training log with the fixed column schema, one row per eval point.

    Floats are rendered at 9 significant digits; identical logs produce
    byte-identical files.
    """
    lines = [",".join(CSV_COLUMNS)]
    for row in log.rows:
        lines.append(
            ",".join(
                [
                    log.scheme,
                    str(log.seed),
                    _fmt(row.step),
                    _fmt(row.train_reward),
                    _fmt(row.eval_reward),
                    _fmt(row.server_utility),
                    _fmt(row.device_utility),
                    _fmt(row.sparsity),
                    _fmt(row.effective_params),
                    _fmt(row.flops),
                    _fmt(row.wall_ms),
                ]
            )
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> TrainLog:
    """Parse a log written by write_csv back into a TrainLog."""
    with open(path, "r") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected log header in {path}")
    scheme = None
    seed = None
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise ValueError(f"malformed log row in {path}")
        scheme = parts[0]
        seed = int(parts[1])
        rows.append(
            LogRow(
                step=int(parts[2]),
                train_reward=float(parts[3]),
                eval_reward=float(parts[4]),
                server_utility=float(parts[5]),
                device_utility=float(parts[6]),
                sparsity=float(parts[7]),
                effective_params=int(parts[8]),
                flops=int(parts[9]),
                wall_ms=int(parts[10]),
            )
        )
    return TrainLog(scheme=scheme or "", seed=seed if seed is not None else -1, rows=rows)


def write_prune_events(events, path) -> None:
    """Prune events as CSV: one row per (event step, layer) with neurons removed."""
    lines = ["step,layer,neurons_removed,realized_sparsity"]
    for ev in events:
        lines.append(
            f"{ev.step},{ev.layer},{ev.neurons_removed}," + _fmt(ev.realized_sparsity)
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def summarize_runs(logs: list) -> dict:
    """Aggregate final-row metrics across seeds, grouped by scheme."""
    by_scheme: dict[str, list[TrainLog]] = {}
    for log in logs:
        by_scheme.setdefault(log.scheme, []).append(log)
    out = {"schema_version": SCHEMA_VERSION, "schemes": {}}
    for scheme in sorted(by_scheme):
        group = [g for g in by_scheme[scheme] if g.rows]
        if not group:
            continue
        finals = [g.rows[-1] for g in group]

        def stat(attr):
            vals = np.array([getattr(r, attr) for r in finals], dtype=np.float64)
            return {"mean": float(vals.mean()), "std": float(vals.std())}

        out["schemes"][scheme] = {
            "seeds": sorted(int(g.seed) for g in group),
            "final_step": int(max(r.step for r in finals)),
            "eval_reward": stat("eval_reward"),
            "server_utility": stat("server_utility"),
            "device_utility": stat("device_utility"),
            "sparsity": stat("sparsity"),
            "effective_params": stat("effective_params"),
            "flops": stat("flops"),
        }
    return out


def write_summary_json(logs: list, path) -> dict:
    summary = summarize_runs(logs)
    with open(path, "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
