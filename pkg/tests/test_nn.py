"""Network stack: masked forward, hand-written gradients against central
finite differences, Adam against a textbook scalar re-implementation, and
the deterministic checkpoint container."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffcontract import nn


def flatten_params(net):
    return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in net.layers])


def set_params(net, theta):
    i = 0
    for l in net.layers:
        n = l.W.size
        l.W = theta[i : i + n].reshape(l.W.shape).copy()
        i += n
        l.b = theta[i : i + l.b.size].copy()
        i += l.b.size


def flatten_grads(grads):
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def fd_gradient(loss_fn, net, h=1e-5):
    theta0 = flatten_params(net)
    g = np.zeros_like(theta0)
    for i in range(theta0.size):
        theta = theta0.copy()
        theta[i] = theta0[i] + h
        set_params(net, theta)
        lp = loss_fn()
        theta[i] = theta0[i] - h
        set_params(net, theta)
        lm = loss_fn()
        g[i] = (lp - lm) / (2 * h)
    set_params(net, theta0)
    return g


def relu_kink_margin(net, x) -> float:
    """Smallest |pre-activation| over alive relu units; finite differences
    are only trustworthy when this clears the probe step comfortably."""
    _, caches = nn.forward_cached(net, x)
    margin = np.inf
    for layer, (_, z) in zip(net.layers, caches):
        if layer.activation == "relu":
            alive = layer.mask.astype(bool)
            if alive.any():
                margin = min(margin, float(np.min(np.abs(z[:, alive]))))
    return margin


def random_net(rng, dims=None, activations=None, mask_prob=0.0):
    dims = dims or [4, 6, 5, 3]
    net = nn.create_mlp(dims, rng, hidden_activation="tanh")
    if activations:
        for layer, act in zip(net.layers, activations):
            layer.activation = act
    if mask_prob > 0:
        for layer in net.layers[:-1]:
            mask = (rng.uniform(size=layer.out_dim) > mask_prob).astype(np.float64)
            if mask.sum() == 0:
                mask[0] = 1.0
            layer.mask = mask
    return net


class TestForward:
    def test_identity_single_layer_is_affine(self):
        layer = nn.DenseLayer(
            W=np.array([[1.0, 2.0], [3.0, 4.0]]),
            b=np.array([0.5, -0.5]),
            mask=np.ones(2),
            activation="identity",
        )
        net = nn.Mlp([layer])
        out = nn.forward_masked(net, np.array([1.0, 1.0]))
        assert np.array_equal(out, [3.5, 6.5])

    def test_relu_clamps(self):
        layer = nn.DenseLayer(
            W=np.array([[1.0], [-1.0]]), b=np.zeros(2), mask=np.ones(2), activation="relu"
        )
        net = nn.Mlp([layer])
        assert np.array_equal(nn.forward_masked(net, np.array([2.0])), [2.0, 0.0])

    def test_masked_neuron_outputs_exact_zero(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, dims=[3, 4, 2])
        net.layers[0].mask = np.array([1.0, 0.0, 1.0, 0.0])
        _, caches = nn.forward_cached(net, rng.normal(size=(5, 3)))
        hidden_out = nn._act(net.layers[0].activation, caches[1][0])
        assert np.all(caches[0][1][:, 1] == 0.0)  # masked pre-activation
        assert np.all(caches[1][0][:, 1] == 0.0)  # what the next layer sees
        assert np.all(caches[1][0][:, 3] == 0.0)

    def test_all_ones_mask_matches_unmasked_bitwise(self):
        rng = np.random.default_rng(1)
        net = random_net(rng)
        x = rng.normal(size=(10, 4))
        ref = x
        for layer in net.layers:
            ref = nn._act(layer.activation, ref @ layer.W.T + layer.b)
        assert np.array_equal(nn.forward_masked(net, x), ref)

    def test_batch_and_single_agree(self):
        # not bitwise: BLAS picks different kernels for different shapes
        rng = np.random.default_rng(2)
        net = random_net(rng)
        x = rng.normal(size=(3, 4))
        batch = nn.forward_masked(net, x)
        for i in range(3):
            assert np.allclose(nn.forward_masked(net, x[i]), batch[i], rtol=1e-12, atol=1e-14)

    def test_repeated_forward_is_bit_identical(self):
        rng = np.random.default_rng(2)
        net = random_net(rng)
        x = rng.normal(size=(3, 4))
        assert np.array_equal(nn.forward_masked(net, x), nn.forward_masked(net, x))

    def test_rejects_wrong_width(self):
        rng = np.random.default_rng(3)
        net = random_net(rng)
        with pytest.raises(ValueError):
            nn.forward_masked(net, np.zeros(5))

    def test_output_layer_mask_enforced(self):
        layer = nn.DenseLayer(np.ones((2, 2)), np.zeros(2), np.array([1.0, 0.0]), "identity")
        with pytest.raises(ValueError):
            nn.Mlp([layer])


class TestBackward:
    def test_matches_central_differences_over_many_nets(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for trial in range(100):
            acts = list(rng.choice(["relu", "tanh", "identity"], size=3))
            acts[-1] = "identity"
            net = random_net(rng, dims=[3, 5, 4, 2], activations=acts, mask_prob=0.3)
            x = rng.normal(size=(4, 3))
            while relu_kink_margin(net, x) < 1e-3:
                x = rng.normal(size=(4, 3))
            up = rng.normal(size=(4, 2))

            def loss():
                return float(np.sum(nn.forward_masked(net, x) * up))

            grads, _ = nn.backward(net, x, up)
            analytic = flatten_grads(grads)
            numeric = fd_gradient(loss, net)
            err = np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(numeric))
            worst = max(worst, err)
        assert worst <= 1e-4

    def test_input_gradient_matches_differences(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, mask_prob=0.25)
        x = rng.normal(size=4)
        up = rng.normal(size=3)
        _, dx = nn.backward(net, x, up)
        h = 1e-6
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (
                float(np.sum(nn.forward_masked(net, xp) * up))
                - float(np.sum(nn.forward_masked(net, xm) * up))
            ) / (2 * h)
            assert abs(fd - dx[j]) <= 1e-6 * max(1.0, abs(fd))

    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(6)
        net = random_net(rng)
        grads, dx = nn.backward(net, rng.normal(size=(2, 4)), np.zeros((2, 3)))
        assert all(np.all(gW == 0) and np.all(gb == 0) for gW, gb in grads)
        assert np.all(dx == 0)

    def test_masked_neuron_gets_zero_gradient(self):
        rng = np.random.default_rng(7)
        net = random_net(rng, dims=[3, 4, 2])
        net.layers[0].mask = np.array([1.0, 0.0, 1.0, 1.0])
        grads, _ = nn.backward(net, rng.normal(size=(6, 3)), rng.normal(size=(6, 2)))
        assert np.all(grads[0][0][1, :] == 0.0)  # row of the dead neuron
        assert np.all(grads[0][1][1] == 0.0)  # its bias


class TestAdam:
    def test_matches_textbook_recurrence_on_scalar(self):
        layer = nn.DenseLayer(np.array([[0.3]]), np.array([0.1]), np.ones(1), "identity")
        net = nn.Mlp([layer])
        state = nn.AdamState.for_net(net)
        gs = [1.0, -0.5, 2.0, 0.25]
        lr = 0.01
        for g in gs:
            nn.adam_step(net, [(np.array([[g]]), np.array([g * 0.5]))], state, lr)
        # textbook reference, recomputed from scratch
        m = v = mb = vb = 0.0
        w, b = 0.3, 0.1
        for t, g in enumerate(gs, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            gb = g * 0.5
            mb = 0.9 * mb + 0.1 * gb
            vb = 0.999 * vb + 0.001 * gb * gb
            b -= lr * (mb / (1 - 0.9**t)) / (np.sqrt(vb / (1 - 0.999**t)) + 1e-8)
        assert net.layers[0].W[0, 0] == pytest.approx(w, rel=1e-12)
        assert net.layers[0].b[0] == pytest.approx(b, rel=1e-12)

    def test_zero_gradient_is_a_fixed_point(self):
        rng = np.random.default_rng(8)
        net = random_net(rng)
        before = flatten_params(net)
        nn.adam_step(net, nn.zero_grads(net), nn.AdamState.for_net(net), 0.1)
        assert np.array_equal(flatten_params(net), before)

    def test_masked_parameters_frozen(self):
        rng = np.random.default_rng(9)
        net = random_net(rng, dims=[3, 4, 2])
        net.layers[0].mask = np.array([1.0, 0.0, 1.0, 1.0])
        state = nn.AdamState.for_net(net)
        w_dead_row = net.layers[0].W[1].copy()
        w_dead_col = net.layers[1].W[:, 1].copy()
        grads = [(np.ones_like(l.W), np.ones_like(l.b)) for l in net.layers]
        for _ in range(5):
            nn.adam_step(net, grads, state, 0.05)
        assert np.array_equal(net.layers[0].W[1], w_dead_row)
        assert np.array_equal(net.layers[1].W[:, 1], w_dead_col)
        assert np.all(state.mW[0][1] == 0.0) and np.all(state.vW[0][1] == 0.0)
        # alive parameters did move
        assert not np.array_equal(net.layers[0].W[0], random_net(np.random.default_rng(9), dims=[3, 4, 2]).layers[0].W[0])

    def test_rejects_negative_lr(self):
        rng = np.random.default_rng(10)
        net = random_net(rng)
        with pytest.raises(ValueError):
            nn.adam_step(net, nn.zero_grads(net), nn.AdamState.for_net(net), -1e-3)


class TestSoftUpdate:
    def test_rate_one_copies(self):
        rng = np.random.default_rng(11)
        a, b = random_net(rng), random_net(rng)
        nn.soft_update(a, b, 1.0)
        assert np.array_equal(flatten_params(a), flatten_params(b))

    def test_midpoint(self):
        rng = np.random.default_rng(12)
        a, b = random_net(rng), random_net(rng)
        expected = 0.5 * (flatten_params(a) + flatten_params(b))
        nn.soft_update(a, b, 0.5)
        assert np.allclose(flatten_params(a), expected, rtol=0, atol=0)

    def test_geometric_contraction(self):
        rng = np.random.default_rng(13)
        target, online = random_net(rng), random_net(rng)
        gap0 = flatten_params(online) - flatten_params(target)
        for k in range(5):
            nn.soft_update(target, online, 0.1)
            gap = flatten_params(online) - flatten_params(target)
            assert np.allclose(gap, gap0 * 0.9 ** (k + 1), rtol=1e-12, atol=1e-12)

    def test_target_stays_in_convex_hull(self):
        rng = np.random.default_rng(14)
        target, online = random_net(rng), random_net(rng)
        lo = np.minimum(flatten_params(target), flatten_params(online))
        hi = np.maximum(flatten_params(target), flatten_params(online))
        nn.soft_update(target, online, 0.3)
        theta = flatten_params(target)
        assert np.all(theta >= lo - 1e-15) and np.all(theta <= hi + 1e-15)

    def test_rejects_bad_rate_and_shape(self):
        rng = np.random.default_rng(15)
        a, b = random_net(rng), random_net(rng)
        with pytest.raises(ValueError):
            nn.soft_update(a, b, 0.0)
        c = random_net(rng, dims=[4, 7, 5, 3])
        with pytest.raises(ValueError):
            nn.soft_update(a, c, 0.5)


class TestParamCount:
    def test_dense_count(self):
        rng = np.random.default_rng(16)
        net = nn.create_mlp([2, 3, 1], rng)
        assert nn.param_count(net) == 13  # 2*3+3 + 3*1+1

    def test_effective_discounts_masked(self):
        rng = np.random.default_rng(17)
        net = nn.create_mlp([2, 3, 1], rng)
        net.layers[0].mask = np.array([1.0, 0.0, 1.0])
        assert nn.param_count(net) == 13
        assert nn.param_count(net, effective=True) == 9  # 2*2+2 + 2*1+1

    def test_fully_masked_hidden_layer_leaves_bias_path(self):
        from diffcontract.metrics import Diagnostics

        rng = np.random.default_rng(18)
        net = nn.create_mlp([2, 3, 1], rng)
        net.layers[0].mask = np.zeros(3)
        diag = Diagnostics()
        assert nn.param_count(net, effective=True, diag=diag) == 1
        assert diag.degenerate_layers == 1

    @settings(deadline=None, max_examples=30)
    @given(seed=st.integers(0, 1000), drop=st.integers(0, 5))
    def test_effective_never_exceeds_dense(self, seed, drop):
        rng = np.random.default_rng(seed)
        net = nn.create_mlp([3, 6, 6, 2], rng)
        for _ in range(drop):
            layer = net.layers[int(rng.integers(0, 2))]
            layer.mask = layer.mask.copy()
            layer.mask[int(rng.integers(0, layer.out_dim))] = 0.0
        assert nn.param_count(net, effective=True) <= nn.param_count(net)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        net = random_net(rng, mask_prob=0.3)
        other = random_net(rng, dims=[2, 3, 1])
        path = tmp_path / "ckpt.npz"
        nn.save_checkpoint(path, {"a": net, "b": other}, {"note": 7})
        nets, meta = nn.load_checkpoint(path)
        assert meta == {"note": 7}
        for name, orig in (("a", net), ("b", other)):
            loaded = nets[name]
            assert np.array_equal(flatten_params(loaded), flatten_params(orig))
            for l0, l1 in zip(orig.layers, loaded.layers):
                assert np.array_equal(l0.mask, l1.mask)
                assert l0.activation == l1.activation

    def test_identical_saves_are_byte_identical(self, tmp_path):
        rng = np.random.default_rng(20)
        net = random_net(rng)
        p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
        nn.save_checkpoint(p1, {"net": net}, {"x": 1})
        nn.save_checkpoint(p2, {"net": net}, {"x": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_gate(self, tmp_path):
        import json
        import zipfile

        rng = np.random.default_rng(21)
        path = tmp_path / "c.npz"
        nn.save_checkpoint(path, {"net": random_net(rng)}, {})
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            entries = {n: zf.read(n) for n in zf.namelist()}
        manifest["format_version"] = 999
        entries["manifest.json"] = json.dumps(manifest).encode()
        with zipfile.ZipFile(path, "w") as zf:
            for name, data in entries.items():
                zf.writestr(name, data)
        with pytest.raises(ValueError):
            nn.load_checkpoint(path)
