import math

import numpy as np
import pytest

from deepindex.model_selection import dropout_closed_form
from deepindex.network import DeepNet, NetworkSpec, UnsupportedActivationError, init_weights, predict, softmax
from deepindex.numerics import finite_diff_grad, make_rng, relative_error
from deepindex.training import (
    Dataset,
    Sparsity,
    TrainConfig,
    TrainingDivergedError,
    backprop,
    batch_gradients,
    kl_divergence,
    loss_value,
    objective,
    penalty_value,
    sgd_train,
)


def linear_net(w, b=0.0):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return DeepNet(NetworkSpec(w.shape[1], (), (), w.shape[0]), [w], [np.full(w.shape[0], b)])


# losses -------------------------------------------------------------------------

def test_mse_examples():
    assert loss_value("mse", [1.0, 2.0], [1.0, 2.0]) == 0.0
    assert loss_value("mse", [1.0, 0.0], [0.0, 0.0]) == 1.0


def test_cross_entropy_uniform():
    assert abs(loss_value("cross_entropy", [0, 0, 1], [0.0, 0.0, 0.0]) - math.log(3)) < 1e-15
    assert abs(loss_value("cross_entropy", [0, 0, 1], [0.0, 0.0, 0.0]) - 1.0986) < 1e-4


def test_cross_entropy_rejects_soft_targets():
    with pytest.raises(ValueError, match="one-hot"):
        loss_value("cross_entropy", [0.5, 0.5], [0.0, 0.0])


def test_cross_entropy_nonnegative_and_stable():
    assert loss_value("cross_entropy", [1, 0], [800.0, -800.0]) >= 0
    assert np.isfinite(loss_value("cross_entropy", [0, 1], [800.0, -800.0]))


def test_config_validation():
    for bad in (dict(lam=-1), dict(learning_rate=0), dict(batch_size=0), dict(epochs=-1),
                dict(dropout_p=0.0), dict(dropout_p=1.2), dict(loss="hinge"), dict(penalty="l0")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# objective ----------------------------------------------------------------------

def test_objective_perfect_fit():
    X = make_rng(0).standard_normal((20, 3))
    w = np.array([[1.0, -2.0, 0.5]])
    assert objective(linear_net(w), Dataset(X, X @ w.T), TrainConfig(lam=0.0)) == 0.0


def test_objective_zero_net():
    rng = make_rng(1)
    X, Y = rng.standard_normal((10, 2)), rng.standard_normal((10, 1))
    net = linear_net(np.zeros((1, 2)))
    assert objective(net, Dataset(X, Y), TrainConfig(lam=1.0)) == pytest.approx(np.mean(np.sum(Y**2, axis=1)))


@pytest.mark.parametrize("penalty", ["ridge", "lasso"])
@pytest.mark.parametrize("with_bias", [False, True])
def test_objective_independent_summation(penalty, with_bias):
    rng = make_rng(2)
    spec = NetworkSpec(3, (4,), ("tanh",), 2)
    net = init_weights(spec, rng)
    net.biases = [rng.standard_normal(b.shape) for b in net.biases]
    X, Y = rng.standard_normal((7, 3)), rng.standard_normal((7, 2))
    cfg = TrainConfig(penalty=penalty, lam=0.3, penalize_biases=with_bias)
    total = 0.0
    for i in range(7):
        h = [math.tanh(sum(net.weights[0][j, k] * X[i, k] for k in range(3)) + net.biases[0][j]) for j in range(4)]
        for o in range(2):
            yh = sum(net.weights[1][o, j] * h[j] for j in range(4)) + net.biases[1][o]
            total += (Y[i, o] - yh) ** 2
    params = [v for w in net.weights for v in w.ravel()]
    if with_bias:
        params += [v for b in net.biases for v in b]
    pen = sum(v * v for v in params) if penalty == "ridge" else sum(abs(v) for v in params)
    assert objective(net, Dataset(X, Y), cfg) == pytest.approx(total / 7 + 0.3 * pen, rel=1e-13)


def test_penalty_zero_at_zero():
    net = linear_net(np.zeros((2, 3)))
    assert penalty_value(net, TrainConfig(lam=1.0)) == 0.0
    assert penalty_value(net, TrainConfig(penalty="lasso", lam=1.0)) == 0.0


def test_map_correspondence():
    """mse + ridge objective is an affine function of the Gaussian negative log posterior."""
    rng = make_rng(3)
    T, sigma, tau = 30, 0.7, 1.3
    X = rng.standard_normal((T, 2))
    Y = rng.standard_normal((T, 1))
    spec = NetworkSpec(2, (3,), ("tanh",), 1)
    lam = sigma**2 / (T * tau**2)
    cfg = TrainConfig(penalty="ridge", lam=lam)
    objs, nlps = [], []
    for _ in range(25):
        net = init_weights(spec, rng, "normal", scale=2.0)
        r = Y - predict(net, X)
        w = np.concatenate([a.ravel() for a in net.weights])
        log_lik = np.sum(-0.5 * np.log(2 * np.pi * sigma**2) - r**2 / (2 * sigma**2))
        log_prior = np.sum(-0.5 * np.log(2 * np.pi * tau**2) - w**2 / (2 * tau**2))
        objs.append(objective(net, Dataset(X, Y), cfg))
        nlps.append(-(log_lik + log_prior))
    slope, intercept = np.polyfit(objs, nlps, 1)
    fitted = slope * np.array(objs) + intercept
    assert np.max(np.abs(fitted - nlps)) < 1e-9 * np.max(np.abs(nlps))
    assert slope == pytest.approx(T / (2 * sigma**2), rel=1e-10)


# gradients ----------------------------------------------------------------------

def test_linear_gradient_closed_form():
    rng = make_rng(4)
    W, x, y = rng.standard_normal((2, 3)), rng.standard_normal(3), rng.standard_normal(2)
    net = linear_net(W)
    dW, db = backprop(net, x, y)
    y_hat = W @ x
    np.testing.assert_allclose(dW[0], 2 * np.outer(y_hat - y, x), rtol=1e-14)
    np.testing.assert_allclose(db[0], 2 * (y_hat - y), rtol=1e-14)


def test_zero_residual_zero_gradient():
    rng = make_rng(5)
    net = init_weights(NetworkSpec(3, (4, 2), ("tanh", "sigmoid"), 2), rng)
    x = rng.standard_normal(3)
    y = predict(net, x[None, :])[0]
    dW, db = backprop(net, x, y)
    assert all(np.all(g == 0) for g in dW + db)


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_two_hidden_tanh_matches_fd(loss):
    rng = make_rng(6)
    net = init_weights(NetworkSpec(4, (5, 3), ("tanh", "tanh"), 3), rng, "normal")
    x = rng.standard_normal(4)
    y = np.array([0.0, 1.0, 0.0]) if loss == "cross_entropy" else rng.standard_normal(3)
    dW, db = backprop(net, x, y, loss)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(dW, db)])

    def f(theta):
        return loss_value(loss, y, predict(net.with_flat_params(theta), x[None, :])[0])

    assert relative_error(analytic, finite_diff_grad(f, net.flat_params())) < 1e-5


def test_softmax_cross_entropy_logit_gradient():
    rng = make_rng(7)
    net = linear_net(rng.standard_normal((4, 3)))
    x, y = rng.standard_normal(3), np.array([0.0, 0.0, 1.0, 0.0])
    _, db = backprop(net, x, y, "cross_entropy")
    z = net.weights[0] @ x
    np.testing.assert_allclose(db[0], softmax(z) - y, rtol=1e-13, atol=1e-15)
    fd = finite_diff_grad(lambda v: loss_value("cross_entropy", y, v), z)
    assert relative_error(db[0], fd) < 1e-8


@pytest.mark.parametrize("act", ["relu", "max_pool", "softmax", "sigmoid", "identity"])
def test_other_activations_match_fd(act):
    rng = make_rng(8)
    net = init_weights(NetworkSpec(3, (6,), (act,), 2), rng, "normal")
    net.biases[0] = rng.standard_normal(6)  # keeps relu kinks away from the probe point
    X, Y = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    dW, db, _ = batch_gradients(net, X, Y, "mse")
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(dW, db)])

    def f(theta):
        return batch_gradients(net.with_flat_params(theta), X, Y, "mse")[2]

    assert relative_error(analytic, finite_diff_grad(f, net.flat_params(), h=1e-6)) < 1e-5


def test_heaviside_rejected():
    net = init_weights(NetworkSpec(2, (3,), ("heaviside",), 1), make_rng(0))
    predict(net, np.ones((1, 2)))  # forward is fine
    with pytest.raises(UnsupportedActivationError):
        backprop(net, np.ones(2), np.ones(1))


def test_kl_sparsity_gradient():
    rng = make_rng(9)
    net = init_weights(NetworkSpec(5, (3,), ("sigmoid",), 5), rng, "normal")
    X = rng.standard_normal((8, 5))
    sp = Sparsity(0.05, 3.0)
    dW, db, value = batch_gradients(net, X, X, "mse", sp)
    assert value == pytest.approx(objective(net, Dataset(X, X), TrainConfig(penalty="none"), sp), rel=1e-13)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(dW, db)])

    def f(theta):
        return batch_gradients(net.with_flat_params(theta), X, X, "mse", sp)[2]

    assert relative_error(analytic, finite_diff_grad(f, net.flat_params())) < 1e-6


def test_kl_nonnegative_and_zero_at_target():
    rho_hat = np.linspace(0.001, 0.999, 101)
    assert np.all(kl_divergence(0.01, rho_hat) >= 0)
    assert kl_divergence(0.3, np.array([0.3]))[0] == 0.0


# SGD ----------------------------------------------------------------------------

def test_sgd_recovers_slope():
    x = np.linspace(-1, 1, 21)[:, None]
    data = Dataset(x, 2 * x)
    cfg = TrainConfig(penalty="none", learning_rate=0.1, batch_size=21, epochs=500, shuffle=False)
    net, hist = sgd_train(linear_net([[0.0]]), data, cfg, make_rng(0))
    assert abs(net.weights[0][0, 0] - 2.0) < 1e-3
    assert abs(net.biases[0][0]) < 1e-3
    obj = np.array(hist.objective)
    assert np.all(np.diff(obj) <= 1e-15)


def test_zero_epochs_unchanged():
    net = init_weights(NetworkSpec(3, (4,), ("tanh",), 1), make_rng(0))
    data = Dataset(np.ones((5, 3)), np.ones((5, 1)))
    out, hist = sgd_train(net, data, TrainConfig(epochs=0), make_rng(1))
    assert np.array_equal(out.flat_params(), net.flat_params())
    assert hist.epochs == [0]


def test_ridge_shrinks_with_lambda():
    rng = make_rng(10)
    X = rng.standard_normal((60, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.standard_normal(60)
    data = Dataset(X, y[:, None])
    norms = []
    for lam in (0.0, 0.1, 1.0, 10.0):
        cfg = TrainConfig(lam=lam, learning_rate=0.02, batch_size=60, epochs=2000, shuffle=False)
        net, _ = sgd_train(linear_net(np.zeros((1, 3))), data, cfg, make_rng(0))
        norms.append(np.linalg.norm(net.weights[0]))
        # full-batch GD converges to the ridge solution (biases unpenalised)
        Xc, yc = X - X.mean(0), y - y.mean()
        w_ref = np.linalg.solve(Xc.T @ Xc / 60 + lam * np.eye(3), Xc.T @ yc / 60)
        np.testing.assert_allclose(net.weights[0][0], w_ref, atol=1e-6)
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_lasso_sparsifies():
    rng = make_rng(11)
    X = rng.standard_normal((80, 4))
    y = X[:, 0] * 2.0 + 0.05 * rng.standard_normal(80)
    cfg = TrainConfig(penalty="lasso", lam=0.2, learning_rate=0.01, batch_size=80, epochs=3000, shuffle=False)
    net, _ = sgd_train(linear_net(np.zeros((1, 4))), Dataset(X, y[:, None]), cfg, make_rng(0))
    w = net.weights[0][0]
    assert abs(w[0]) > 1.5
    assert np.all(np.abs(w[1:]) < 0.02)


def test_seeded_determinism():
    rng = make_rng(12)
    X, Y = rng.standard_normal((40, 3)), rng.standard_normal((40, 2))
    spec = NetworkSpec(3, (5,), ("tanh",), 2)
    cfg = TrainConfig(epochs=20, batch_size=7, dropout_p=0.8)
    a, ha = sgd_train(init_weights(spec, make_rng(1)), Dataset(X, Y), cfg, make_rng(2))
    b, hb = sgd_train(init_weights(spec, make_rng(1)), Dataset(X, Y), cfg, make_rng(2))
    assert np.array_equal(a.flat_params(), b.flat_params())
    assert ha.objective == hb.objective


def test_divergence_names_epoch():
    X = make_rng(0).standard_normal((50, 2))
    data = Dataset(X, X @ np.array([[3.0], [1.0]]))
    with pytest.raises(TrainingDivergedError, match="epoch"):
        sgd_train(linear_net(np.zeros((1, 2))), data, TrainConfig(learning_rate=50.0, epochs=500), make_rng(1))


def test_heaviside_rejected_by_trainer():
    net = init_weights(NetworkSpec(2, (3,), ("heaviside",), 1), make_rng(0))
    with pytest.raises(UnsupportedActivationError):
        sgd_train(net, Dataset(np.ones((4, 2)), np.ones((4, 1))), TrainConfig(epochs=1), make_rng(0))


def test_dropout_serving_matches_marginal_solution():
    """Linear dropout SGD converges near the marginal minimiser; serving scales W0 by p."""
    rng = make_rng(13)
    X = rng.standard_normal((100, 2))
    y = X @ np.array([1.5, -1.0]) + 0.1 * rng.standard_normal(100)
    p = 0.6
    w_closed, _ = dropout_closed_form(X, y, p)
    net = DeepNet(NetworkSpec(2, (), (), 1), [np.zeros((1, 2))], [np.zeros(1)])
    cfg = TrainConfig(penalty="none", learning_rate=0.002, batch_size=1, epochs=300, dropout_p=p)
    served, _ = sgd_train(net, Dataset(X, y[:, None]), cfg, make_rng(0))
    np.testing.assert_allclose(served.weights[0][0], p * w_closed, atol=0.05)


def test_history_csv(tmp_path):
    X = make_rng(0).standard_normal((10, 2))
    val = Dataset(X[:3], X[:3, :1])
    _, hist = sgd_train(linear_net(np.zeros((1, 2))), Dataset(X, X[:, :1]), TrainConfig(epochs=3), make_rng(0),
                        validation=val)
    path = tmp_path / "h.csv"
    hist.to_csv(path)
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "epoch,objective,validation_objective"
    assert len(lines) == 5
    assert float(lines[-1].split(",")[1]) == hist.objective[-1]


def test_lr_decay_changes_path():
    X = make_rng(0).standard_normal((20, 2))
    data = Dataset(X, X[:, :1])
    a, _ = sgd_train(linear_net(np.zeros((1, 2))), data, TrainConfig(epochs=5), make_rng(0))
    b, _ = sgd_train(linear_net(np.zeros((1, 2))), data, TrainConfig(epochs=5, lr_decay=True), make_rng(0))
    assert not np.array_equal(a.flat_params(), b.flat_params())
