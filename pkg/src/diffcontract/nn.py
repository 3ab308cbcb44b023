"""Dense network stack with neuron masks and hand-written reverse-mode gradients.

A layer computes out = f((W h + b) * m) where m is a per-neuron 0/1 mask.
Every supported activation satisfies f(0) = 0, so a masked neuron outputs
exactly 0 and contributes nothing downstream. Gradients for masked rows, and
for columns fed by masked neurons of the previous layer, are identically zero
by construction, and the Adam step freezes their moments so dead parameters
never move again.

All math runs in float64 with numpy's deterministic accumulation order, so
repeated passes over the same inputs are bit-identical on one machine.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

CHECKPOINT_VERSION = 1

# fixed zip metadata keeps checkpoint bytes independent of wall-clock time
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    W: np.ndarray  # [out_dim, in_dim]
    b: np.ndarray  # [out_dim]
    mask: np.ndarray  # [out_dim], entries 0.0 or 1.0
    activation: str

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be 2-D [out, in]")
        if self.b.shape != (self.W.shape[0],):
            raise ValueError("b must match the layer output dimension")
        if self.mask.shape != (self.W.shape[0],):
            raise ValueError("mask must match the layer output dimension")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def alive(self) -> int:
        return int(self.mask.sum())


class Mlp:
    """A chain of DenseLayer. The output layer mask must stay all-ones."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("need at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ValueError("layer dimensions do not chain")
        if not np.all(layers[-1].mask == 1.0):
            raise ValueError("output layer neurons cannot be masked")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def dims(self) -> list[int]:
        return [self.in_dim] + [l.out_dim for l in self.layers]

    def copy(self) -> "Mlp":
        return Mlp(
            [
                DenseLayer(l.W.copy(), l.b.copy(), l.mask.copy(), l.activation)
                for l in self.layers
            ]
        )


def create_mlp(
    dims: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
    final_init_scale: float | None = None,
) -> Mlp:
    """He-style Gaussian init for hidden layers, optional small uniform head."""
    if len(dims) < 2:
        raise ValueError("need an input and an output dimension")
    if any(d < 1 for d in dims):
        raise ValueError("layer dimensions must be at least 1")
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        last = i == len(dims) - 2
        act = output_activation if last else hidden_activation
        if last and final_init_scale is not None:
            W = rng.uniform(-final_init_scale, final_init_scale, size=(fan_out, fan_in))
        else:
            std = np.sqrt(2.0 / fan_in) if act == "relu" else np.sqrt(1.0 / fan_in)
            W = rng.normal(0.0, std, size=(fan_out, fan_in))
        layers.append(DenseLayer(W, np.zeros(fan_out), np.ones(fan_out), act))
    return Mlp(layers)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError("input must be 1-D or 2-D")


def forward_masked(net: Mlp, x) -> np.ndarray:
    """Forward pass; masked neurons output exactly 0."""
    h, squeeze = _as_batch(x)
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match network ({net.in_dim})")
    for layer in net.layers:
        z = (h @ layer.W.T + layer.b) * layer.mask
        h = _act(layer.activation, z)
    return h[0] if squeeze else h


def forward_cached(net: Mlp, x) -> tuple[np.ndarray, list]:
    """Forward pass that retains (input, masked pre-activation) per layer."""
    h, squeeze = _as_batch(x)
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match network ({net.in_dim})")
    caches = []
    for layer in net.layers:
        z = (h @ layer.W.T + layer.b) * layer.mask
        caches.append((h, z))
        h = _act(layer.activation, z)
    return (h[0] if squeeze else h), caches


def backward_from_cache(net: Mlp, caches: list, upstream: np.ndarray):
    """Reverse-mode pass from dL/d(output). Returns (per-layer grads, dL/d(input)).

    Gradients are lists of (dW, db) aligned with net.layers. Masked neurons
    receive zero weight and bias gradients because the mask sits between the
    affine map and the loss.
    """
    d = np.asarray(upstream, dtype=np.float64)
    if d.ndim == 1:
        d = d[None, :]
    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h_in, z = caches[i]
        d = d * _act_grad(layer.activation, z)
        d = d * layer.mask
        grads[i] = (d.T @ h_in, d.sum(axis=0))
        d = d @ layer.W
    return grads, d


def backward(net: Mlp, x, upstream):
    """Convenience wrapper: forward then reverse. Returns (grads, input grad)."""
    _, caches = forward_cached(net, x)
    up, squeeze = _as_batch(upstream)
    grads, dx = backward_from_cache(net, caches, up)
    return grads, (dx[0] if squeeze else dx)


def zero_grads(net: Mlp) -> list:
    return [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]


def accumulate_grads(total: list, grads: list) -> None:
    for (tW, tb), (gW, gb) in zip(total, grads):
        tW += gW
        tb += gb


def _in_mask(net: Mlp, i: int) -> np.ndarray:
    if i == 0:
        return np.ones(net.layers[0].in_dim)
    return net.layers[i - 1].mask


@dataclass
class AdamState:
    mW: list
    vW: list
    mb: list
    vb: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(
            mW=[np.zeros_like(l.W) for l in net.layers],
            vW=[np.zeros_like(l.W) for l in net.layers],
            mb=[np.zeros_like(l.b) for l in net.layers],
            vb=[np.zeros_like(l.b) for l in net.layers],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(net: Mlp, grads: list, state: AdamState, lr: float) -> None:
    """One Adam update in place. Parameters and moments of masked rows, and of
    columns fed by masked neurons, are frozen."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (layer, (gW, gb)) in enumerate(zip(net.layers, grads)):
        alive_out = layer.mask.astype(bool)
        alive_in = _in_mask(net, i).astype(bool)
        aliveW = np.outer(alive_out, alive_in)

        mW = b1 * state.mW[i] + (1 - b1) * gW
        vW = b2 * state.vW[i] + (1 - b2) * gW * gW
        stepW = lr * (mW / c1) / (np.sqrt(vW / c2) + state.eps)
        state.mW[i] = np.where(aliveW, mW, state.mW[i])
        state.vW[i] = np.where(aliveW, vW, state.vW[i])
        layer.W = np.where(aliveW, layer.W - stepW, layer.W)

        mb = b1 * state.mb[i] + (1 - b1) * gb
        vb = b2 * state.vb[i] + (1 - b2) * gb * gb
        stepb = lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps)
        state.mb[i] = np.where(alive_out, mb, state.mb[i])
        state.vb[i] = np.where(alive_out, vb, state.vb[i])
        layer.b = np.where(alive_out, layer.b - stepb, layer.b)


def soft_update(target: Mlp, online: Mlp, rate: float) -> None:
    """Polyak averaging, target <- rate*online + (1-rate)*target. Masks copy over."""
    if not (0.0 < rate <= 1.0):
        raise ValueError("rate must lie in (0, 1]")
    if target.dims() != online.dims():
        raise ValueError("architectures do not match")
    for lt, lo in zip(target.layers, online.layers):
        if lt.activation != lo.activation:
            raise ValueError("architectures do not match")
        lt.W = rate * lo.W + (1.0 - rate) * lt.W
        lt.b = rate * lo.b + (1.0 - rate) * lt.b
        lt.mask = lo.mask.copy()


def param_count(net: Mlp, effective: bool = False, diag=None) -> int:
    """Total parameters; with effective=True only those reachable through
    alive neurons (alive_out*alive_in weights plus alive_out biases)."""
    total = 0
    for i, layer in enumerate(net.layers):
        if effective:
            out_alive = layer.alive()
            in_alive = int(_in_mask(net, i).sum())
            if diag is not None and out_alive == 0:
                diag.degenerate_layers += 1
            total += out_alive * in_alive + out_alive
        else:
            total += layer.out_dim * layer.in_dim + layer.out_dim
    return total


def save_checkpoint(path, nets: dict[str, Mlp], meta: dict | None = None) -> None:
    """Persist named networks plus a JSON metadata blob in one zip container.

    Entries are raw .npy arrays readable by numpy, written with fixed
    timestamps and no compression so identical contents give identical bytes.
    """
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "nets": {
            name: {
                "dims": net.dims(),
                "activations": [l.activation for l in net.layers],
            }
            for name, net in nets.items()
        },
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:

        def put(name: str, data: bytes):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, data)

        put("manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())
        for name in sorted(nets):
            net = nets[name]
            for i, layer in enumerate(net.layers):
                for tag, arr in (("W", layer.W), ("b", layer.b), ("mask", layer.mask)):
                    buf = io.BytesIO()
                    np.lib.format.write_array(buf, np.ascontiguousarray(arr))
                    put(f"{name}/layer{i}/{tag}.npy", buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint format version {manifest.get('format_version')} "
                f"is not supported (expected {CHECKPOINT_VERSION})"
            )
        nets = {}
        for name, info in manifest["nets"].items():
            layers = []
            for i, act in enumerate(info["activations"]):
                def read(tag):
                    return np.lib.format.read_array(
                        io.BytesIO(zf.read(f"{name}/layer{i}/{tag}.npy"))
                    )
                layers.append(DenseLayer(read("W"), read("b"), read("mask"), act))
            nets[name] = Mlp(layers)
    return nets, manifest.get("meta", {})
