import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgsqa.errors import InvalidMode, InvalidP, ShapeMismatch, StaleCache
from ppgsqa.gradcheck import central_difference, layer_gradient_error, rel_error
from ppgsqa.nn import (BlockSpec, ModelConfig, ParameterStore, SignalQualityNet,
                       basic_block_backward, basic_block_forward, block_plan, init_parameters)
from ppgsqa.nn import functional as F
from ppgsqa.rng import seeded_rng
from ppgsqa.training import cross_entropy_loss

SEEDS = range(5)
TOL = 1e-5


# -- oracles -------------------------------------------------------------------

def naive_conv(x, w, stride, pad):
    B, C, L = x.shape
    O, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    Lo = (L + 2 * pad - K) // stride + 1
    y = np.zeros((B, O, Lo))
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for t in range(Lo):
                    for k in range(K):
                        y[b, o, t] += w[o, c, k] * xp[b, c, t * stride + k]
    return y


def naive_pool(x, k, s, p):
    B, C, L = x.shape
    Lo = (L + 2 * p - k) // s + 1
    y = np.empty((B, C, Lo))
    for t in range(Lo):
        lo, hi = max(t * s - p, 0), min(t * s - p + k, L)
        y[:, :, t] = x[:, :, lo:hi].max(axis=2)
    return y


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 1, 960))
    y, _ = F.conv1d_forward(x, np.ones((1, 1, 1)))
    assert np.array_equal(y, x)


def test_conv_stem_shape():
    y, _ = F.conv1d_forward(np.zeros((64, 3, 960)), np.zeros((32, 3, 7)), stride=2, padding=3)
    assert y.shape == (64, 32, 480)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 3), (2, 0), (3, 2)])
def test_conv_matches_naive(rng, stride, pad):
    x = rng.standard_normal((2, 3, 16))
    w = rng.standard_normal((4, 3, 3))
    y, _ = F.conv1d_forward(x, w, stride=stride, padding=pad)
    np.testing.assert_allclose(y, naive_conv(x, w, stride, pad), rtol=1e-5, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        F.conv1d_forward(np.zeros((1, 2, 10)), np.zeros((4, 3, 3)))


def test_bn_training_centers(rng):
    x = rng.standard_normal((4, 5, 30)) * 3 + 7
    y, _ = F.batchnorm1d_forward(x, np.ones(5), np.zeros(5), None, None, True)
    assert np.all(np.abs(y.mean(axis=(0, 2))) < 1e-5)


def test_bn_affine_on_normalized(rng):
    x = rng.standard_normal((4, 3, 50))
    x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
    y, _ = F.batchnorm1d_forward(x, np.full(3, 2.0), np.full(3, 3.0), None, None, True)
    np.testing.assert_allclose(y, 2 * x + 3, atol=1e-4)


def test_bn_eval_identity(rng):
    x = rng.standard_normal((2, 3, 10))
    y, _ = F.batchnorm1d_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), False)
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(y, x, rtol=1e-5)


def test_bn_running_stats_update(rng):
    x = rng.standard_normal((4, 2, 25)) + 1.0
    rm, rv = np.zeros(2), np.ones(2)
    F.batchnorm1d_forward(x, np.ones(2), np.zeros(2), rm, rv, True)
    flat = x.transpose(1, 0, 2).reshape(2, -1)
    np.testing.assert_allclose(rm, 0.1 * flat.mean(axis=1))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * flat.var(axis=1, ddof=1))


def test_bn_eval_needs_stats():
    with pytest.raises(InvalidMode):
        F.batchnorm1d_forward(np.zeros((1, 2, 3)), np.ones(2), np.zeros(2), None, None, False)


def test_maxpool_stem_length():
    y, _ = F.maxpool1d_forward(np.zeros((1, 1, 480)))
    assert y.shape == (1, 1, 240)


def test_maxpool_monotone():
    x = np.arange(20.0).reshape(1, 1, 20)
    y, _ = F.maxpool1d_forward(x, 3, 2, 1)
    ends = np.minimum(np.arange(10) * 2 + 1, 19)
    assert np.array_equal(y[0, 0], x[0, 0, ends])


@pytest.mark.parametrize("k,s,p", [(3, 2, 1), (2, 2, 0), (3, 1, 1), (5, 3, 2)])
def test_maxpool_matches_naive(rng, k, s, p):
    x = rng.standard_normal((2, 3, 17))
    y, _ = F.maxpool1d_forward(x, k, s, p)
    assert np.array_equal(y, naive_pool(x, k, s, p))


def test_se_identical_channels():
    rng = np.random.default_rng(3)
    x = np.broadcast_to(rng.standard_normal((2, 1, 20)), (2, 16, 20)).copy()
    fc1 = rng.standard_normal((2, 16))
    fc2 = np.broadcast_to(rng.standard_normal((1, 2)), (16, 2)).copy()
    _, cache = F.se_forward(x, fc1, fc2)
    s = cache[4]
    assert np.all(s == s[:, :1])


def test_se_zero_fc2(rng):
    x = rng.standard_normal((2, 16, 20))
    y, _ = F.se_forward(x, rng.standard_normal((2, 16)), np.zeros((16, 2)))
    assert np.array_equal(y, x / 2)


def test_se_composition_oracle(rng):
    x = rng.standard_normal((2, 32, 240))
    fc1 = rng.standard_normal((4, 32))
    fc2 = rng.standard_normal((32, 4))
    y, _ = F.se_forward(x, fc1, fc2)
    z = x.sum(axis=2) / 240
    s = 1 / (1 + np.exp(-(np.maximum(z @ fc1.T, 0) @ fc2.T)))
    np.testing.assert_allclose(y, x * s[:, :, None], rtol=1e-6, atol=1e-12)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_se_scales_strictly_inside_unit_interval(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 16, 12)) * r.uniform(0.1, 5)
    _, cache = F.se_forward(x, r.standard_normal((2, 16)), r.standard_normal((16, 2)))
    s = cache[4]
    assert np.all((s > 0) & (s < 1))


def test_sigmoid_extremes():
    s = F.sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert s[1] == 0.5 and 0 <= s[0] < 1e-300 and s[2] == 1.0


def test_dropout_modes(rng):
    x = rng.standard_normal((2, 3, 4))
    assert F.dropout_forward(x, 0.2, seeded_rng(0), training=False)[0] is x
    assert F.dropout_forward(x, 0.0, seeded_rng(0), training=True)[0] is x
    for p in (-0.1, 1.0, 1.5):
        with pytest.raises(InvalidP):
            F.dropout_forward(x, p, seeded_rng(0))


def test_dropout_mean_preserved():
    y, _ = F.dropout_forward(np.ones((1, 1, 10 ** 6)), 0.2, seeded_rng(11))
    assert abs(y.mean() - 1.0) < 0.005
    assert set(np.unique(y)) <= {0.0, 1.25}


# -- gradient checks of every layer in isolation -------------------------------

def check_layer(fwd, bwd_grads, inputs, seed):
    assert layer_gradient_error(fwd, bwd_grads, inputs, seed + 100) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((2, 3, 11)), r.standard_normal((4, 3, 3)), r.standard_normal(4)

    def grads(G):
        _, c = F.conv1d_forward(x, w, b, 2, 1)
        return F.conv1d_backward(G, c)
    check_layer(lambda: F.conv1d_forward(x, w, b, 2, 1)[0], grads, [x, w, b], seed)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("training", [True, False])
def test_grad_batchnorm(seed, training):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 4, 7)) * 2 + 1
    g, b = r.uniform(0.5, 1.5, 4), r.standard_normal(4)
    rm, rv = r.standard_normal(4), r.uniform(0.5, 2, 4)

    def fwd():
        return F.batchnorm1d_forward(x, g, b, rm.copy(), rv.copy(), training)[0]

    def grads(G):
        _, c = F.batchnorm1d_forward(x, g, b, rm.copy(), rv.copy(), training)
        return F.batchnorm1d_backward(G, c)
    check_layer(fwd, grads, [x, g, b], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_relu(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 9))
    x += np.sign(x) * 0.01  # keep every input off the kink

    def grads(G):
        return [F.relu_backward(G, F.relu_forward(x)[1])]
    check_layer(lambda: F.relu_forward(x)[0], grads, [x], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_maxpool(seed):
    r = np.random.default_rng(seed)
    # well separated values so no probe changes a window's argmax
    x = (r.permutation(2 * 3 * 13).reshape(2, 3, 13) * 0.01 + r.uniform(0, 1e-3, (2, 3, 13)))

    def grads(G):
        return [F.maxpool1d_backward(G, F.maxpool1d_forward(x)[1])]
    check_layer(lambda: F.maxpool1d_forward(x)[0], grads, [x], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_dropout(seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 8))

    def fwd():
        return F.dropout_forward(x, 0.3, seeded_rng(seed))[0]

    def grads(G):
        return [F.dropout_backward(G, F.dropout_forward(x, 0.3, seeded_rng(seed))[1])]
    check_layer(fwd, grads, [x], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_linear(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((3, 6)), r.standard_normal((2, 6)), r.standard_normal(2)

    def grads(G):
        return F.linear_backward(G, F.linear_forward(x, w, b)[1])
    check_layer(lambda: F.linear_forward(x, w, b)[0], grads, [x, w, b], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_avgpool(seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 9))

    def grads(G):
        return [F.adaptive_avgpool_backward(G, x.shape)]
    check_layer(lambda: F.adaptive_avgpool_forward(x)[0], grads, [x], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_se(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 16, 6))
    fc1, fc2 = r.standard_normal((2, 16)), r.standard_normal((16, 2))

    def grads(G):
        return F.se_backward(G, F.se_forward(x, fc1, fc2)[1])

    hidden = F.se_forward(x, fc1, fc2)[1][2]
    assert np.all(np.abs(hidden) > 1e-3), "bottleneck unit too close to its kink"
    check_layer(lambda: F.se_forward(x, fc1, fc2)[0], grads, [x, fc1, fc2], seed)


def test_grad_cross_entropy():
    r = np.random.default_rng(0)
    logits = r.standard_normal((5, 2))
    labels = r.integers(0, 2, 5)
    _, g = cross_entropy_loss(logits, labels)
    for idx in np.ndindex(logits.shape):
        fd = central_difference(lambda: cross_entropy_loss(logits, labels)[0], logits, idx, 1e-5)
        assert abs(fd - g[idx]) < 1e-6


# -- residual block ------------------------------------------------------------

def block_store(spec, config, seed, dtype=np.float64):
    r = np.random.default_rng(seed)
    s = ParameterStore(dtype)
    p = spec.name
    hidden = spec.out_ch // config.reduction_ratio
    s.add_param(f"{p}.conv1.weight", r.standard_normal((spec.out_ch, spec.in_ch, 3)) * 0.3)
    for bn in ("bn1", "bn2") + (("shortcut.bn",) if spec.projection else ()):
        s.add_param(f"{p}.{bn}.weight", r.uniform(0.5, 1.5, spec.out_ch))
        s.add_param(f"{p}.{bn}.bias", r.standard_normal(spec.out_ch) * 0.1)
        s.add_buffer(f"{p}.{bn}.running_mean", r.standard_normal(spec.out_ch) * 0.1)
        s.add_buffer(f"{p}.{bn}.running_var", r.uniform(0.5, 2, spec.out_ch))
    s.add_param(f"{p}.conv2.weight", r.standard_normal((spec.out_ch, spec.out_ch, 3)) * 0.3)
    if config.use_se:
        s.add_param(f"{p}.se.fc1.weight", r.standard_normal((hidden, spec.out_ch)))
        s.add_param(f"{p}.se.fc2.weight", r.standard_normal((spec.out_ch, hidden)))
    if spec.projection:
        s.add_param(f"{p}.shortcut.conv.weight", r.standard_normal((spec.out_ch, spec.in_ch, 1)))
    return s


def same(ga, gb):
    return all(np.array_equal(a, b) for a, b in zip(ga, gb))


def block_gates(cache):
    g = [cache["relu1"], cache["relu2"]]
    if "se" in cache:
        g.append(cache["se"][2] > 0)
    return g


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("spec", [BlockSpec("b", 16, 16, 1), BlockSpec("b", 8, 16, 2)])
def test_grad_basic_block(seed, spec):
    config = ModelConfig(in_channels=1, use_se=True, dropout_p=0.2)
    store = block_store(spec, config, seed)
    x = np.random.default_rng(seed + 50).standard_normal((2, spec.in_ch, 10))

    def run():
        return basic_block_forward(x, store, spec, config, True, seeded_rng(seed))

    y, cache = run()
    base = block_gates(cache)
    G = np.random.default_rng(seed + 100).standard_normal(y.shape)
    dx = basic_block_backward(G, cache, store, spec, config)
    analytic = [(x, dx)] + [(store.params[n], store.grads[n].copy()) for n in store.names()]
    pick = np.random.default_rng(seed + 200)
    checked = 0
    for arr, grad in analytic:
        for _ in range(6):
            idx = tuple(int(pick.integers(n)) for n in arr.shape)
            old = arr[idx]
            arr[idx] = old + 1e-4
            yp, cp = run()
            arr[idx] = old - 1e-4
            ym, cm = run()
            arr[idx] = old
            if not (same(base, block_gates(cp)) and same(base, block_gates(cm))):
                continue
            fd = (np.sum(yp * G) - np.sum(ym * G)) / 2e-4
            assert rel_error(fd, grad[idx]) < TOL
            checked += 1
    assert checked >= 40


# -- whole model ---------------------------------------------------------------

def make_net(in_channels=3, use_se=True, seed=0, dtype=np.float64):
    return SignalQualityNet.initialize(ModelConfig(in_channels=in_channels, use_se=use_se),
                                       seeded_rng(seed), dtype)


def test_full_batch_shape():
    net = make_net(dtype=np.float32)
    x = np.random.default_rng(0).standard_normal((64, 3, 960)).astype(np.float32)
    logits = net.forward(x, training=False)
    assert logits.shape == (64, 2)


@pytest.mark.parametrize("in_channels,use_se", [(1, False), (3, True), (4, True)])
def test_shape_trace(in_channels, use_se):
    net = make_net(in_channels, use_se)
    net.store.eval()
    net.forward(np.zeros((2, in_channels, 960)) + 0.1)
    assert net.shape_trace == [(2, in_channels, 960), (2, 32, 480), (2, 32, 240), (2, 32, 240),
                               (2, 64, 120), (2, 64, 1), (2, 2)]


def test_eval_purity_and_duplicate_rows():
    net = make_net()
    row = np.random.default_rng(1).standard_normal((1, 3, 960))
    x = np.concatenate([row, row, row * 2])
    a = net.forward(x, training=False)
    b = net.forward(x, training=False)
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(a[0], a[1])


def test_eval_does_not_touch_buffers():
    net = make_net()
    before = {k: v.copy() for k, v in net.store.buffers.items()}
    net.forward(np.random.default_rng(2).standard_normal((2, 3, 960)), training=False)
    assert all(np.array_equal(before[k], v) for k, v in net.store.buffers.items())


def test_residual_degeneracy():
    """Zero residual-branch weights: the net reduces to stem + shortcut paths."""
    config = ModelConfig(in_channels=2, use_se=True)
    store = init_parameters(config, seeded_rng(4), np.float64)
    r = np.random.default_rng(4)
    for n, buf in store.buffers.items():
        buf[...] = r.uniform(0.5, 2, buf.shape) if n.endswith("var") else r.standard_normal(buf.shape)
    for n in store.names():
        if ".conv1." in n or ".conv2." in n or ".bn2." in n:
            store.params[n][...] = 0
    store.params["fc.bias"][...] = r.standard_normal(2)
    x = r.standard_normal((3, 2, 960))
    got = SignalQualityNet(config, store).forward(x, training=False)

    def bn(h, p):
        m, v = store[f"{p}.running_mean"], store[f"{p}.running_var"]
        return (store[f"{p}.weight"][:, None] * (h - m[:, None]) / np.sqrt(v[:, None] + 1e-5)
                + store[f"{p}.bias"][:, None])

    expect = []
    for xb in x:
        h = np.maximum(bn(naive_conv(xb[None], store["stem.conv.weight"], 2, 3)[0], "stem.bn"), 0)
        h = naive_pool(h[None], 3, 2, 1)[0]
        for spec in block_plan(config):
            if spec.projection:
                w = store[f"{spec.name}.shortcut.conv.weight"]
                h = bn(naive_conv(h[None], w, spec.stride, 0)[0], f"{spec.name}.shortcut.bn")
            h = np.maximum(h, 0)
        expect.append(store["fc.weight"] @ h.mean(axis=1) + store["fc.bias"])
    np.testing.assert_allclose(got, np.array(expect), rtol=1e-9, atol=1e-12)


def test_residual_identity_block(rng):
    spec = BlockSpec("b", 32, 32, 1)
    config = ModelConfig(in_channels=1, use_se=False)
    s = ParameterStore(np.float64)
    s.add_param("b.conv1.weight", np.zeros((32, 32, 3)))
    s.add_param("b.conv2.weight", np.zeros((32, 32, 3)))
    for bn in ("bn1", "bn2"):
        s.add_param(f"b.{bn}.weight", np.ones(32))
        s.add_param(f"b.{bn}.bias", np.zeros(32))
        s.add_buffer(f"b.{bn}.running_mean", np.zeros(32))
        s.add_buffer(f"b.{bn}.running_var", np.ones(32))
    x = rng.standard_normal((2, 32, 20))
    y, _ = basic_block_forward(x, s, spec, config, training=False)
    assert np.array_equal(y, np.maximum(x, 0))


def test_downsampling_block_shape():
    spec = BlockSpec("b", 32, 64, 2)
    config = ModelConfig(in_channels=1, use_se=True)
    y, _ = basic_block_forward(np.random.default_rng(0).standard_normal((1, 32, 240)),
                               block_store(spec, config, 0), spec, config)
    assert y.shape == (1, 64, 120)


def test_block_matches_composition(rng):
    spec = BlockSpec("b", 8, 16, 2)
    config = ModelConfig(in_channels=1, use_se=True)
    s = block_store(spec, config, 3)
    x = rng.standard_normal((2, 8, 20))
    got, _ = basic_block_forward(x, s, spec, config, training=False)

    def bn(h, p):
        return F.batchnorm1d_forward(h, s[f"b.{p}.weight"], s[f"b.{p}.bias"],
                                     s[f"b.{p}.running_mean"], s[f"b.{p}.running_var"], False)[0]

    h = np.maximum(bn(naive_conv(x, s["b.conv1.weight"], 2, 1), "bn1"), 0)
    h = bn(naive_conv(h, s["b.conv2.weight"], 1, 1), "bn2")
    h = F.se_forward(h, s["b.se.fc1.weight"], s["b.se.fc2.weight"])[0]
    sc = bn(naive_conv(x, s["b.shortcut.conv.weight"], 2, 0), "shortcut.bn")
    np.testing.assert_allclose(got, np.maximum(h + sc, 0), rtol=1e-5, atol=1e-10)


def test_backward_without_forward():
    net = make_net()
    with pytest.raises(StaleCache):
        net.backward(np.zeros((2, 2)))
    net.forward(np.zeros((2, 3, 960)) + 0.5, training=False)
    with pytest.raises(StaleCache):
        net.backward(np.zeros((2, 2)))


def test_backward_consumes_cache():
    net = make_net()
    x = np.random.default_rng(0).standard_normal((2, 3, 960))
    net.forward(x, training=True, rng=seeded_rng(0))
    net.backward(np.ones((2, 2)))
    with pytest.raises(StaleCache):
        net.backward(np.ones((2, 2)))


def test_zero_loss_gradient():
    net = make_net()
    net.forward(np.random.default_rng(0).standard_normal((2, 3, 960)), training=True,
                rng=seeded_rng(0))
    net.backward(np.zeros((2, 2)))
    assert all(not g.any() for g in net.store.grads.values())


def test_same_seed_bit_identical_gradients():
    x = np.random.default_rng(0).standard_normal((4, 3, 960)).astype(np.float32)
    y = np.array([0, 1, 0, 1])
    grads = []
    for _ in range(2):
        net = make_net(dtype=np.float32, seed=9)
        loss, g = cross_entropy_loss(net.forward(x, training=True, rng=seeded_rng(3)), y)
        net.backward(g)
        grads.append(b"".join(v.tobytes() for v in net.store.grads.values()))
    assert grads[0] == grads[1]


def test_parameter_names_stable():
    a = init_parameters(ModelConfig(), seeded_rng(0)).names()
    b = init_parameters(ModelConfig(), seeded_rng(99)).names()
    assert a == b
    assert a[:3] == ["stem.conv.weight", "stem.bn.weight", "stem.bn.bias"]
    assert a[-2:] == ["fc.weight", "fc.bias"]
    assert "layer2.block0.shortcut.conv.weight" in a
    assert not any("layer1" in n and "shortcut" in n for n in a)


def test_model_rejects_wrong_channels():
    with pytest.raises(ShapeMismatch):
        make_net(3).forward(np.zeros((1, 2, 960)), training=False)


@given(st.integers(8, 400), st.integers(1, 7), st.integers(1, 4), st.integers(0, 3))
@settings(max_examples=60, deadline=None)
def test_shape_algebra(L, k, s, p):
    if p >= k or F.out_length(L, k, s, p) < 1:
        return
    expect = (L + 2 * p - k) // s + 1
    y, _ = F.conv1d_forward(np.zeros((1, 2, L)), np.zeros((3, 2, k)), stride=s, padding=p)
    assert y.shape == (1, 3, expect)
    if 2 * p <= k:
        y, _ = F.maxpool1d_forward(np.zeros((1, 2, L)), k, s, p)
        assert y.shape == (1, 2, expect)
