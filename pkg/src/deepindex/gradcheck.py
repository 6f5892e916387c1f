"""Random-configuration gradient checks against central finite differences."""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lstm import SequenceData, _lstm_loss_grads, _rnn_loss_grads
from .network import NetworkSpec, init_weights
from .numerics import finite_diff_grad, make_rng, relative_error
from .training import batch_gradients

# smooth activations only: kinks (relu, max_pool ties) defeat finite differences
SMOOTH = ("sigmoid", "tanh", "identity", "softmax")


@dataclass
class GradCase:
    kind: str
    description: str
    rel_error: float


def _flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays])


def _unflatten(theta, like):
    out, pos = [], 0
    for a in like:
        out.append(theta[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return out


def check_mlp(rng, max_depth=3, max_width=8):
    depth = int(rng.integers(0, max_depth + 1))
    hidden = tuple(int(n) for n in rng.integers(1, max_width + 1, size=depth))
    acts = tuple(str(a) for a in rng.choice(SMOOTH, size=depth))
    loss = str(rng.choice(["mse", "cross_entropy"]))
    n_in = int(rng.integers(1, max_width + 1))
    n_out = int(rng.integers(2 if loss == "cross_entropy" else 1, max_width + 1))
    spec = NetworkSpec(n_in, hidden, acts, n_out)
    net = init_weights(spec, rng, "normal", scale=1.0)
    rows = int(rng.integers(1, 6))
    X = rng.standard_normal((rows, n_in))
    if loss == "cross_entropy":
        Y = np.eye(n_out)[rng.integers(0, n_out, size=rows)]
    else:
        Y = rng.standard_normal((rows, n_out))

    dW, db, _ = batch_gradients(net, X, Y, loss)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(dW, db)])

    def f(theta):
        return batch_gradients(net.with_flat_params(theta), X, Y, loss)[2]

    numeric = finite_diff_grad(f, net.flat_params())
    desc = f"mlp in={n_in} hidden={hidden} acts={acts} out={n_out} loss={loss} rows={rows}"
    return GradCase("mlp", desc, relative_error(analytic, numeric))


def _sequence_case(rng, max_len, max_width):
    B = int(rng.integers(1, 4))
    T = int(rng.integers(1, max_len + 1))
    I = int(rng.integers(1, 4))
    H = int(rng.integers(1, min(max_width, 4) + 1))
    O = int(rng.integers(1, 3))
    mask = (rng.random((B, T)) < 0.8).astype(float)
    mask[0, -1] = 1.0
    data = SequenceData(rng.standard_normal((B, T, I)), rng.standard_normal((B, T, O)), mask)
    return data, B, T, I, H, O


def check_lstm(rng, max_len=5, max_width=8):
    data, B, T, I, H, O = _sequence_case(rng, max_len, max_width)
    params = [
        0.7 * rng.standard_normal((4 * H, H + I)),
        0.3 * rng.standard_normal(4 * H),
        0.7 * rng.standard_normal((O, H)),
        0.3 * rng.standard_normal(O),
    ]
    _, grads = _lstm_loss_grads(params, data)

    def f(theta):
        return _lstm_loss_grads(_unflatten(theta, params), data)[0]

    numeric = finite_diff_grad(f, _flatten(params))
    desc = f"lstm B={B} T={T} I={I} H={H} O={O}"
    return GradCase("lstm", desc, relative_error(_flatten(grads), numeric))


def check_rnn(rng, max_len=5, max_width=8):
    data, B, T, I, H, O = _sequence_case(rng, max_len, max_width)
    hid, out = (str(a) for a in rng.choice(["tanh", "sigmoid", "identity"], size=2))
    codes = (_kernels.ACT_CODES[hid], _kernels.ACT_CODES[out])
    params = [
        0.7 * rng.standard_normal((H, I)),
        0.7 * rng.standard_normal((H, H)),
        0.3 * rng.standard_normal(H),
        0.7 * rng.standard_normal((O, H)),
        0.3 * rng.standard_normal(O),
    ]
    _, grads = _rnn_loss_grads(params, data, codes)

    def f(theta):
        return _rnn_loss_grads(_unflatten(theta, params), data, codes)[0]

    numeric = finite_diff_grad(f, _flatten(params))
    desc = f"rnn B={B} T={T} I={I} H={H} O={O} f={hid} g={out}"
    return GradCase("rnn", desc, relative_error(_flatten(grads), numeric))


def gradient_suite(n_configs, seed, max_depth=3, max_width=8, max_len=5):
    """Run ``n_configs`` cases of each kind (mlp, lstm, rnn)."""
    cases = []
    for i in range(n_configs):
        cases.append(check_mlp(make_rng(seed, 0, i), max_depth, max_width))
        cases.append(check_lstm(make_rng(seed, 1, i), max_len, max_width))
        cases.append(check_rnn(make_rng(seed, 2, i), max_len, max_width))
    return cases
