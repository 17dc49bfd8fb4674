import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamprior.errors import ConfigError, DataError, NumericError, ShapeError
from beamprior.nn import (
    AdamWState,
    DenseNet,
    Layer,
    adamw_step,
    assign_params,
    load_checkpoint,
    net_backward,
    net_forward,
    save_checkpoint,
    sinusoidal_embedding,
    softmax,
)


def mse_loss(out, y):
    return float(np.sum((out - y) ** 2)), 2.0 * (out - y)


def ce_loss(out, labels):
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].sum()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g


def fd_grads(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def identity_net(act):
    return DenseNet([Layer(np.eye(2), np.zeros(2), act)])


def test_forward_identity_and_relu():
    out, _ = net_forward(identity_net("identity"), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [1.0, 2.0])
    out, _ = net_forward(identity_net("relu"), np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(out, [0.0, 2.0])


def test_forward_two_layers_by_hand():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.5, -3.0])
    W2 = np.array([[1.0, 2.0]])
    b2 = np.array([0.25])
    net = DenseNet([Layer(W1, b1, "relu"), Layer(W2, b2, "identity")])
    # x=[3,1]: z1 = [3-1+0.5, 6+0.5-3] = [2.5, 3.5]; out = 2.5 + 7 + 0.25
    out, _ = net_forward(net, np.array([3.0, 1.0]))
    assert out.tolist() == [9.75]


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        net_forward(identity_net("relu"), np.ones(3))


def test_backward_zero_grad():
    net = DenseNet.build([4, 8, 3], np.random.default_rng(0))
    _, cache = net_forward(net, np.ones((5, 4)))
    grads, gin = net_backward(net, cache, np.zeros((5, 3)))
    assert all(not g.any() for g in grads)
    assert not gin.any()


def test_backward_linear_least_squares():
    rng = np.random.default_rng(3)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    x, y = rng.normal(size=4), rng.normal(size=3)
    net = DenseNet([Layer(W.copy(), b.copy(), "identity")])
    out, cache = net_forward(net, x)
    grads, _ = net_backward(net, cache, 2 * (out - y))
    r = W @ x + b - y
    np.testing.assert_allclose(grads[0], 2 * np.outer(r, x), rtol=1e-13)
    np.testing.assert_allclose(grads[1], 2 * r, rtol=1e-13)


def test_backward_stale_cache():
    net = DenseNet.build([4, 8, 3], np.random.default_rng(0))
    other = DenseNet.build([4, 6, 3], np.random.default_rng(0))
    _, cache = net_forward(other, np.ones((2, 4)))
    with pytest.raises(ShapeError):
        net_backward(net, cache, np.ones((2, 3)))
    with pytest.raises(ShapeError):
        net_backward(DenseNet.build([4, 3], np.random.default_rng(0)), cache, np.ones((2, 3)))


@settings(max_examples=25, deadline=None, derandomize=True)
@given(
    seed=st.integers(0, 2**31),
    sizes=st.lists(st.integers(1, 32), min_size=2, max_size=4),
    loss=st.sampled_from(["mse", "ce"]),
)
def test_gradient_check_random_nets(seed, sizes, loss):
    rng = np.random.default_rng(seed)
    if loss == "ce" and sizes[-1] < 2:
        sizes[-1] = 2
    net = DenseNet.build(sizes, rng)
    x = rng.normal(size=(3, sizes[0]))
    if loss == "mse":
        target = rng.normal(size=(3, sizes[-1]))
        fn = mse_loss
    else:
        target = rng.integers(0, sizes[-1], size=3)
        fn = ce_loss
    out, cache = net_forward(net, x)
    _, g = fn(out, target)
    grads, _ = net_backward(net, cache, g)
    num = fd_grads(lambda: fn(net(x), target)[0], net.params())
    assert rel_err(grads, num) < 1e-4


def test_input_gradient():
    rng = np.random.default_rng(5)
    net = DenseNet.build([5, 16, 4], rng)
    x = rng.normal(size=(2, 5))
    y = rng.normal(size=(2, 4))
    out, cache = net_forward(net, x)
    _, gin = net_backward(net, cache, mse_loss(out, y)[1])
    num = fd_grads(lambda: mse_loss(net(x), y)[0], [x])
    assert rel_err([gin], num) < 1e-6


def test_adamw_zero_gradient_no_decay():
    p = [np.array([1.0, -2.0])]
    adamw_step(p, [np.zeros(2)], AdamWState.for_params(p, weight_decay=0.0))
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adamw_single_step_by_hand():
    p = [np.array([1.0])]
    state = AdamWState.for_params(p, lr=0.1, weight_decay=0.0)
    adamw_step(p, [np.array([1.0])], state)
    m_hat = (1 - 0.9) * 1.0 / (1 - 0.9)
    v_hat = (1 - 0.999) * 1.0 / (1 - 0.999)
    assert abs(p[0][0] - (1 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8))) < 1e-10
    assert state.step == 1


def test_adamw_decay_is_decoupled():
    p = [np.array([2.0])]
    adamw_step(p, [np.array([0.0])], AdamWState.for_params(p, lr=0.1, weight_decay=0.5))
    assert abs(p[0][0] - 1.9) < 1e-15


def test_adamw_quadratic_decreases():
    rng = np.random.default_rng(0)
    c = rng.normal(size=6)
    w = [c + rng.choice([-1.0, 1.0], size=6)]
    state = AdamWState.for_params(w, lr=0.01)
    losses = []
    for _ in range(50):
        losses.append(np.sum((w[0] - c) ** 2))
        adamw_step(w, [2 * (w[0] - c)], state)
    losses.append(np.sum((w[0] - c) ** 2))
    assert np.all(np.diff(losses) < 0)


def test_adamw_shape_mismatch():
    p = [np.zeros(3)]
    with pytest.raises(ShapeError):
        adamw_step(p, [np.zeros(2)], AdamWState.for_params(p))


def test_sinusoidal_embedding():
    e0 = sinusoidal_embedding(0)
    assert e0.shape == (64,)
    assert not e0[:32].any() and (e0[32:] == 1).all()
    np.testing.assert_array_equal(sinusoidal_embedding(17), sinusoidal_embedding(17))
    np.testing.assert_allclose(sinusoidal_embedding(1, dim=4), [np.sin(1), np.sin(1e-2), np.cos(1), np.cos(1e-2)], rtol=1e-15)
    batch = sinusoidal_embedding(np.array([0, 1, 2]), dim=8)
    assert batch.shape == (3, 8)
    np.testing.assert_array_equal(batch[2], sinusoidal_embedding(2, dim=8))
    with pytest.raises(ConfigError):
        sinusoidal_embedding(1, dim=5)


def test_softmax():
    np.testing.assert_allclose(softmax(np.zeros(4)), np.full(4, 0.25))
    c = 1.7
    np.testing.assert_allclose(softmax(np.array([c, c + np.log(2)])), [1 / 3, 2 / 3], rtol=1e-14)
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(softmax(v), softmax(v + 100), rtol=1e-14)
    with pytest.raises(NumericError):
        softmax(np.array([0.0, np.nan]))


def test_init_is_glorot_and_deterministic():
    a = DenseNet.build([10, 30, 2], np.random.default_rng(9))
    b = DenseNet.build([10, 30, 2], np.random.default_rng(9))
    for pa, pb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(pa, pb)
    lim = np.sqrt(6 / 40)
    assert np.abs(a.layers[0].weight).max() <= lim
    assert not a.layers[0].bias.any()
    assert a.param_count == 10 * 30 + 30 + 30 * 2 + 2


def test_checkpoint_round_trip(tmp_path):
    net = DenseNet.build([3, 7, 2], np.random.default_rng(1))
    path = tmp_path / "n.ckpt"
    save_checkpoint(path, net.describe(), net.params(), {"seed": 1})
    arch, params, meta = load_checkpoint(path)
    assert meta == {"seed": 1}
    clone = DenseNet.from_description(arch)
    assign_params(clone.params(), params)
    x = np.random.default_rng(2).normal(size=(4, 3))
    np.testing.assert_array_equal(clone(x), net(x))
    data = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-5])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(tmp_path / "cut.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"nope" + data)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.ckpt")
