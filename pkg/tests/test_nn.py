import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bideepkriging.errors import (ArgumentError, ConfigurationError, IncompatibleVersionError,
                                  ModelFormatError, TrainingDivergenceError)
from bideepkriging.nn import (LayerSpec, LossWeights, Network, TrainConfig, TrainHistory, data_loss,
                              dense_stack, forward, grad, load, loss, penalty, save, train)


def random_net(rng, dims, l1=0.0, l2=0.0, frozen=()):
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        layers.append(LayerSpec(a, b, "identity" if last else "relu", l1, l2, i in frozen))
    return Network.initialize(layers, rng, "normal", 0.7)


def flat_params(net):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(net.weights, net.biases)])


def test_zero_network_outputs_zero(rng):
    net = Network(dense_stack(5, [4, 2]))
    np.testing.assert_array_equal(forward(net, rng.normal(size=5)), [0.0, 0.0])


def test_identity_layer():
    net = Network([LayerSpec(2, 2, "identity")], [np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(forward(net, [3.5, -1.25]), [3.5, -1.25])


def test_two_layer_forward_hand_oracle():
    W1 = [[0.1, -0.2, 0.3], [0.5, 0.4, -0.6]]
    b1 = [0.05, -0.1]
    W2 = [[1.0, -2.0], [0.5, 0.25]]
    b2 = [0.01, 0.02]
    net = Network([LayerSpec(3, 2, "relu"), LayerSpec(2, 2, "identity")], [W1, W2], [b1, b2])
    x = [1.0, 2.0, 3.0]
    h = [max(0.0, sum(W1[r][c] * x[c] for c in range(3)) + b1[r]) for r in range(2)]
    y = [sum(W2[r][c] * h[c] for c in range(2)) + b2[r] for r in range(2)]
    np.testing.assert_allclose(forward(net, x), y, atol=1e-12, rtol=0)


def test_forward_dimension_mismatch(rng):
    net = random_net(rng, [3, 4, 2])
    with pytest.raises(ArgumentError):
        forward(net, np.ones(4))


def test_final_layer_must_be_identity():
    with pytest.raises(ConfigurationError):
        Network([LayerSpec(2, 2, "relu")])
    with pytest.raises(ConfigurationError):
        Network([LayerSpec(2, 3, "relu"), LayerSpec(4, 2, "identity")])


def test_loss_zero_for_perfect_predictions(rng):
    net = random_net(rng, [3, 5, 2])
    X = rng.normal(size=(7, 3))
    assert loss(net, X, forward(net, X)) == 0.0


def test_loss_single_sample_formula():
    net = Network([LayerSpec(1, 2, "identity")], [np.zeros((2, 1))], [np.array([1.0, 2.0])])
    assert loss(net, [[0.0]], [[0.0, 0.0]], LossWeights((1.0, 1.0))) == pytest.approx(2.5)


def test_inverse_variance_weights_equal_standardized_loss(rng):
    net = random_net(rng, [3, 6, 2])
    X = rng.normal(size=(40, 3))
    Y = rng.normal(size=(40, 2)) * [3.0, 0.2] + [1.0, -5.0]
    var = Y.var(axis=0, ddof=1)
    weighted = data_loss(net, X, Y, LossWeights(tuple(1 / var)))
    R = (forward(net, X) - Y) / np.sqrt(var)
    assert weighted == pytest.approx(np.mean((R**2).sum(axis=1)) / 2, rel=1e-12)


def test_penalty_sums_regularized_layers(rng):
    net = random_net(rng, [3, 4, 2], l1=0.1, l2=0.2)
    want = sum(0.1 * np.abs(W).sum() + 0.2 * (W**2).sum() for W in net.weights)
    assert penalty(net) == pytest.approx(want)


def test_zero_residual_zero_gradient(rng):
    net = random_net(rng, [3, 4, 2])
    X = rng.normal(size=(6, 3))
    for dW, db in grad(net, X, forward(net, X)):
        assert not dW.any() and not db.any()


def finite_difference_check(net, X, Y, w, step=1e-5, kink=1e-6):
    g = grad(net, X, Y, w)
    worst = 0.0
    for li in range(len(net.layers)):
        for arr, garr in ((net.weights[li], g[li][0]), (net.biases[li], g[li][1])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                old = arr[ix]
                arr[ix] = old + step
                fp = loss(net, X, Y, w)
                arr[ix] = old - step
                fm = loss(net, X, Y, w)
                arr[ix] = old
                num = (fp - fm) / (2 * step)
                ana = garr[ix]
                worst = max(worst, abs(num - ana) / max(1e-6, abs(num), abs(ana)))
    return g, worst


def near_kink(net, X, kink=1e-4):
    a = X
    for l, W, b in zip(net.layers, net.weights, net.biases):
        h = a @ W.T + b
        if l.activation == "relu" and np.any(np.abs(h) < kink):
            return True
        a = np.maximum(h, 0) if l.activation == "relu" else h
    return False


@pytest.mark.parametrize("dims", [[3, 2], [4, 5, 2], [3, 6, 4, 2], [5, 3, 3, 3, 1]])
def test_gradient_matches_finite_differences(dims):
    rng = np.random.default_rng(sum(dims))
    net = random_net(rng, dims, l1=1e-3, l2=1e-2)
    X = rng.normal(size=(9, dims[0]))
    while near_kink(net, X):
        X = rng.normal(size=(9, dims[0]))
    Y = rng.normal(size=(9, dims[-1]))
    w = LossWeights(tuple(rng.uniform(0.5, 2.0, size=dims[-1])))
    _, worst = finite_difference_check(net, X, Y, w)
    assert worst < 1e-4


@given(seed=st.integers(0, 10**6), hidden=st.integers(1, 6), depth=st.integers(0, 2))
@settings(max_examples=25, deadline=None)
def test_gradient_property(seed, hidden, depth):
    rng = np.random.default_rng(seed)
    dims = [3] + [hidden] * depth + [2]
    net = random_net(rng, dims, l2=1e-2)
    X = rng.normal(size=(5, 3))
    if near_kink(net, X):
        return
    _, worst = finite_difference_check(net, X, rng.normal(size=(5, 2)), None)
    assert worst < 1e-4


def test_frozen_layer_gets_zero_gradient():
    rng = np.random.default_rng(3)
    net = random_net(rng, [3, 5, 4, 2], frozen=(0,))
    X = rng.normal(size=(8, 3))
    Y = rng.normal(size=(8, 2))
    g = grad(net, X, Y)
    assert not g[0][0].any() and not g[0][1].any()
    free = random_net(np.random.default_rng(3), [3, 5, 4, 2])
    gf = grad(free, X, Y)
    for i in (1, 2):
        np.testing.assert_allclose(g[i][0], gf[i][0], atol=1e-14)


def test_all_frozen_training_is_identity(rng):
    net = random_net(rng, [3, 4, 2]).with_frozen(2)
    X = rng.normal(size=(30, 3))
    out = train(net, X, rng.normal(size=(30, 2)), cfg=TrainConfig(epochs=5))
    assert out.params_equal(net)


def test_epochs_zero_unchanged(rng):
    net = random_net(rng, [3, 4, 2])
    out = train(net, rng.normal(size=(10, 3)), rng.normal(size=(10, 2)), cfg=TrainConfig(epochs=0))
    assert out.params_equal(net)


def test_train_deterministic(rng):
    net = random_net(rng, [3, 8, 2])
    X = rng.normal(size=(50, 3))
    Y = rng.normal(size=(50, 2))
    cfg = TrainConfig(epochs=15, seed=4)
    a = train(net, X, Y, None, cfg)
    b = train(net, X, Y, None, cfg)
    assert np.array_equal(flat_params(a), flat_params(b))
    assert not np.array_equal(flat_params(a), flat_params(net))


@pytest.mark.parametrize("optimizer,epochs,lr", [("adam", 3000, 0.01), ("lbfgs", 5000, 0.01)])
def test_linear_net_recovers_least_squares(optimizer, epochs, lr):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(60, 4))
    B = rng.normal(size=(4, 2))
    c = np.array([0.3, -1.0])
    Y = X @ B + c
    net = Network([LayerSpec(4, 2, "identity")])
    out = train(net, X, Y, None, TrainConfig(epochs=epochs, learning_rate=lr, optimizer=optimizer,
                                             batch_size=60, patience=0))
    A = np.column_stack([X, np.ones(60)])
    coef = np.linalg.lstsq(A, Y, rcond=None)[0]
    np.testing.assert_allclose(out.weights[0], coef[:4].T, atol=1e-3)
    np.testing.assert_allclose(out.biases[0], coef[4], atol=1e-3)


def test_sgd_reduces_loss(rng):
    net = random_net(rng, [3, 6, 2])
    X = rng.normal(size=(80, 3))
    Y = np.column_stack([X[:, 0], X[:, 1] - X[:, 2]])
    hist = TrainHistory()
    out = train(net, X, Y, None, TrainConfig(epochs=40, optimizer="sgd", learning_rate=0.02, patience=0), hist)
    assert loss(out, X, Y) < loss(net, X, Y)
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_early_stopping_restores_best(rng):
    net = random_net(rng, [3, 32, 2])
    X = rng.normal(size=(40, 3))
    Y = rng.normal(size=(40, 2))
    hist = TrainHistory()
    train(net, X, Y, None, TrainConfig(epochs=400, patience=5, learning_rate=0.05), hist)
    assert hist.stopped_epoch >= 0
    assert min(hist.val_loss) == pytest.approx(hist.val_loss[hist.best_epoch])


def test_divergence_reports_epoch():
    rng = np.random.default_rng(0)
    net = random_net(rng, [2, 16, 2])
    X = rng.normal(size=(20, 2)) * 1e3
    Y = rng.normal(size=(20, 2)) * 1e150
    with pytest.raises(TrainingDivergenceError) as err:
        train(net, X, Y, None, TrainConfig(epochs=50, optimizer="sgd", learning_rate=10.0, patience=0))
    assert err.value.epoch is not None and err.value.epoch >= 0


def test_l2_shrinks_weights_monotonically():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    Y = X @ rng.normal(size=(3, 2))
    norms = []
    for l2 in (0.0, 0.01, 0.1, 1.0):
        net = Network([LayerSpec(3, 2, "identity", 0.0, l2)])
        out = train(net, X, Y, None, TrainConfig(optimizer="lbfgs", epochs=2000, patience=0))
        norms.append(np.linalg.norm(out.weights[0]))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_initializers(rng):
    layers = dense_stack(200, [300, 2])
    n = Network.initialize(layers, rng, "normal")
    assert abs(n.weights[0].std() - np.sqrt(2 / 200)) < 0.005
    u = Network.initialize(layers, rng, "uniform", bounds=(-0.05, 0.05))
    assert u.weights[0].min() >= -0.05 and u.weights[0].max() <= 0.05


def test_save_load_round_trip(tmp_path, rng):
    net = random_net(rng, [4, 7, 3, 2], l1=0.01)
    p = tmp_path / "net.json"
    save(net, p)
    back = load(p)
    X = rng.normal(size=(20, 4))
    np.testing.assert_array_equal(forward(back, X), forward(net, X))
    assert back.layers == net.layers


def test_load_truncated_file(tmp_path, rng):
    p = tmp_path / "net.json"
    save(random_net(rng, [3, 2]), p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load(p)


def test_load_version_mismatch(tmp_path, rng):
    p = tmp_path / "net.json"
    save(random_net(rng, [3, 2]), p)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(IncompatibleVersionError):
        load(p)


def test_save_is_byte_deterministic(tmp_path, rng):
    net = random_net(rng, [3, 4, 2])
    save(net, tmp_path / "a.json")
    save(net, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_loss_weights_positive():
    with pytest.raises(ConfigurationError):
        LossWeights((1.0, 0.0))
