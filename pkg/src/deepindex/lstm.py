"""LSTM cell and a vanilla recurrent baseline.

LSTM update, with ``h = [z_prev, x_t]``::

    F_t  = sigmoid(W_f h + b_f)        forget gate
    I_t  = sigmoid(W_i h + b_i)        input gate
    Cb_t = tanh(W_c h + b_c)           input modulation
    O_t  = sigmoid(W_o h + b_o)        output gate
    C_t  = F_t * C_{t-1} + I_t * Cb_t
    Z_t  = O_t * tanh(C_t)

Vanilla recurrence::

    Z_t = f(W_xz x_t + W_zz Z_{t-1} + b_x)
    Y_t = g(W_hz Z_t + b_z)

Sequences start from a zero state. Batches of sequences are (B, T, dim)
arrays; the per-step loops run in :mod:`deepindex._kernels`.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .network import sigmoid
from .numerics import ShapeError, as_matrix, as_vector, make_rng
from .training import History, TrainingDivergedError


@dataclass
class LstmCell:
    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        for name in ("w_f", "w_i", "w_c", "w_o"):
            setattr(self, name, as_matrix(getattr(self, name), name))
        for name in ("b_f", "b_i", "b_c", "b_o"):
            setattr(self, name, as_vector(getattr(self, name), name))
        H, HI = self.w_f.shape
        if HI <= H:
            raise ShapeError("gate weights must be hidden x (hidden + input)")
        for name in ("w_i", "w_c", "w_o"):
            if getattr(self, name).shape != (H, HI):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H, HI)}")
        for name in ("b_f", "b_i", "b_c", "b_o"):
            if getattr(self, name).shape != (H,):
                raise ShapeError(f"{name} must have length {H}")

    @property
    def hidden_size(self):
        return self.w_f.shape[0]

    @property
    def input_size(self):
        return self.w_f.shape[1] - self.w_f.shape[0]

    def stacked(self):
        W = np.concatenate([self.w_f, self.w_i, self.w_c, self.w_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return W, b

    @classmethod
    def from_stacked(cls, W, b):
        H = W.shape[0] // 4
        parts = [W[k * H:(k + 1) * H] for k in range(4)]
        bias = [b[k * H:(k + 1) * H] for k in range(4)]
        return cls(*parts, *bias)

    def copy(self):
        return LstmCell.from_stacked(*self.stacked())


@dataclass
class Readout:
    """Affine map applied to each hidden state."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "readout weight")
        self.bias = as_vector(self.bias, "readout bias")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError("readout bias length must equal output size")

    def copy(self):
        return Readout(self.weight.copy(), self.bias.copy())


@dataclass
class LstmState:
    z: np.ndarray
    c: np.ndarray


@dataclass
class RnnCell:
    w_xz: np.ndarray
    w_zz: np.ndarray
    b_x: np.ndarray
    w_hz: np.ndarray
    b_z: np.ndarray
    activation: str = "tanh"
    output_activation: str = "tanh"

    def __post_init__(self):
        self.w_xz = as_matrix(self.w_xz, "w_xz")
        self.w_zz = as_matrix(self.w_zz, "w_zz")
        self.b_x = as_vector(self.b_x, "b_x")
        self.w_hz = as_matrix(self.w_hz, "w_hz")
        self.b_z = as_vector(self.b_z, "b_z")
        H = self.w_zz.shape[0]
        if (
            self.w_zz.shape != (H, H)
            or self.w_xz.shape[0] != H
            or self.b_x.shape != (H,)
            or self.w_hz.shape[1] != H
            or self.b_z.shape != (self.w_hz.shape[0],)
        ):
            raise ShapeError("inconsistent RNN parameter shapes")
        for a in (self.activation, self.output_activation):
            if a not in _kernels.ACT_CODES:
                raise ValueError(f"unsupported recurrent activation {a!r}")

    @property
    def hidden_size(self):
        return self.w_zz.shape[0]

    def copy(self):
        return RnnCell(
            self.w_xz.copy(), self.w_zz.copy(), self.b_x.copy(), self.w_hz.copy(),
            self.b_z.copy(), self.activation, self.output_activation,
        )


def init_lstm(input_size, hidden_size, output_size, rng, forget_bias=1.0):
    """Glorot-uniform gates and read-out; forget-gate bias starts at ``forget_bias``."""
    fan_in = hidden_size + input_size
    a = np.sqrt(6.0 / (fan_in + hidden_size))
    W = rng.uniform(-a, a, size=(4 * hidden_size, fan_in))
    b = np.zeros(4 * hidden_size)
    b[:hidden_size] = forget_bias
    a_out = np.sqrt(6.0 / (hidden_size + output_size))
    readout = Readout(rng.uniform(-a_out, a_out, size=(output_size, hidden_size)), np.zeros(output_size))
    return LstmCell.from_stacked(W, b), readout


def init_rnn(input_size, hidden_size, output_size, rng, activation="tanh", output_activation="tanh"):
    a = np.sqrt(6.0 / (input_size + hidden_size))
    r = np.sqrt(6.0 / (2 * hidden_size))
    o = np.sqrt(6.0 / (hidden_size + output_size))
    return RnnCell(
        rng.uniform(-a, a, size=(hidden_size, input_size)),
        rng.uniform(-r, r, size=(hidden_size, hidden_size)),
        np.zeros(hidden_size),
        rng.uniform(-o, o, size=(output_size, hidden_size)),
        np.zeros(output_size),
        activation,
        output_activation,
    )


def zero_state(hidden_size):
    return LstmState(np.zeros(hidden_size), np.zeros(hidden_size))


def lstm_step(cell, state, x):
    """One LSTM update; returns the new state."""
    x = np.asarray(x, dtype=np.float64)
    H = cell.hidden_size
    if x.shape != (cell.input_size,):
        raise ShapeError(f"input must have length {cell.input_size}, got shape {x.shape}")
    if state.z.shape != (H,) or state.c.shape != (H,):
        raise ShapeError(f"state vectors must have length {H}")
    h = np.concatenate([state.z, x])
    f = sigmoid(cell.w_f @ h + cell.b_f)
    i = sigmoid(cell.w_i @ h + cell.b_i)
    cb = np.tanh(cell.w_c @ h + cell.b_c)
    o = sigmoid(cell.w_o @ h + cell.b_o)
    c = f * state.c + i * cb
    return LstmState(o * np.tanh(c), c)


def _as_batch(sequences, dim, what):
    X = np.asarray(sequences, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != dim:
        raise ShapeError(f"{what} must be (T, {dim}) or (B, T, {dim}), got {X.shape}")
    if X.shape[1] < 1:
        raise ValueError("sequence is empty")
    return np.ascontiguousarray(X)


def lstm_forward(cell, sequence, readout):
    """Read-outs for every step of ``sequence`` ((T, I) or (B, T, I))."""
    X = _as_batch(sequence, cell.input_size, "sequence")
    W, b = cell.stacked()
    Y = _kernels.lstm_forward(X, W, b, readout.weight, readout.bias)[0]
    return Y[0] if np.ndim(sequence) == 2 else Y


def lstm_states(cell, sequence):
    """``(Z, C, G)`` for a single (T, I) sequence: states with their cells, then activated gates."""
    X = _as_batch(sequence, cell.input_size, "sequence")
    W, b = cell.stacked()
    H = cell.hidden_size
    _, Z, C, G, _ = _kernels.lstm_forward(X, W, b, np.zeros((1, H)), np.zeros(1))
    return Z[0, 1:], C[0, 1:], G[0]


def rnn_forward(cell, sequence):
    X = _as_batch(sequence, cell.w_xz.shape[1], "sequence")
    Y = _kernels.rnn_forward(
        X, cell.w_xz, cell.w_zz, cell.b_x, cell.w_hz, cell.b_z,
        _kernels.ACT_CODES[cell.activation], _kernels.ACT_CODES[cell.output_activation],
    )[0]
    return Y[0] if np.ndim(sequence) == 2 else Y


@dataclass
class SequenceData:
    """Aligned input/target sequences; ``mask`` (B, T) marks scored steps."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 3 or self.targets.ndim != 3:
            raise ShapeError("inputs and targets must be (B, T, dim)")
        if self.inputs.shape[:2] != self.targets.shape[:2]:
            raise ShapeError("input and target sequences must be aligned")
        if self.mask is None:
            self.mask = np.ones(self.inputs.shape[:2])
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.shape != self.inputs.shape[:2]:
            raise ShapeError("mask must be (B, T)")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, rows):
        return SequenceData(self.inputs[rows], self.targets[rows], self.mask[rows])


def sequence_loss(Y, data):
    """Masked mean squared error per scored step."""
    r = (Y - data.targets) * data.mask[..., None]
    return float(np.sum(r * r) / np.sum(data.mask))


def _lstm_loss_grads(params, data):
    W, b, Wy, by = params
    Y, Z, C, G, tC = _kernels.lstm_forward(data.inputs, W, b, Wy, by)
    n = np.sum(data.mask)
    loss = sequence_loss(Y, data)
    dY = 2.0 * (Y - data.targets) * data.mask[..., None] / n
    return loss, _kernels.lstm_backward(data.inputs, W, Wy, Z, C, G, tC, np.ascontiguousarray(dY))


def _rnn_loss_grads(params, data, codes):
    Wxz, Wzz, bx, Why, bz = params
    Y, Z, P, Q = _kernels.rnn_forward(data.inputs, Wxz, Wzz, bx, Why, bz, *codes)
    n = np.sum(data.mask)
    loss = sequence_loss(Y, data)
    dY = 2.0 * (Y - data.targets) * data.mask[..., None] / n
    grads = _kernels.rnn_backward(
        data.inputs, Wxz, Wzz, Why, Y, Z, P, Q, np.ascontiguousarray(dY), *codes
    )
    return loss, grads


def lstm_loss_and_grads(cell, readout, data):
    """Masked MSE and its exact BPTT gradient ``(dW, db, dWy, dby)`` (stacked gates)."""
    W, b = cell.stacked()
    return _lstm_loss_grads((W, b, readout.weight, readout.bias), data)


def rnn_loss_and_grads(cell, data):
    codes = (_kernels.ACT_CODES[cell.activation], _kernels.ACT_CODES[cell.output_activation])
    params = (cell.w_xz, cell.w_zz, cell.b_x, cell.w_hz, cell.b_z)
    return _rnn_loss_grads(params, data, codes)


# which entries of each parameter tuple count as weights for the ridge penalty
_LSTM_WEIGHTS = (True, False, True, False)
_RNN_WEIGHTS = (True, True, False, True, False)


def _sgd_recurrent(params, is_weight, loss_grads, data, cfg, rng):
    # epoch >= 1 history entries are running means over the epoch's mini-batches
    if cfg.dropout_p != 1.0:
        raise ValueError("dropout is not supported for recurrent models")
    if cfg.loss != "mse":
        raise ValueError("recurrent models train on mse")
    params = [p.copy() for p in params]
    history = History()
    penalise = cfg.penalty != "none" and cfg.lam > 0

    def penalty():
        if not penalise:
            return 0.0
        ws = [p for p, w in zip(params, is_weight) if w or cfg.penalize_biases]
        if cfg.penalty == "ridge":
            return float(sum(np.sum(p * p) for p in ws))
        return float(sum(np.sum(np.abs(p)) for p in ws))

    def evaluate(epoch):
        with np.errstate(over="ignore", invalid="ignore"):
            obj = loss_grads(params, data)[0] + cfg.lam * penalty()
        if not np.isfinite(obj):
            raise TrainingDivergedError(f"objective became non-finite at epoch {epoch}")
        history.record(epoch, obj)

    evaluate(0)
    B = len(data)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate / epoch if cfg.lr_decay else cfg.learning_rate
        order = rng.permutation(B) if cfg.shuffle else np.arange(B)
        running, weight = 0.0, 0.0
        for start in range(0, B, cfg.batch_size):
            batch = data.subset(order[start:start + cfg.batch_size])
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_grads(params, batch)
            n = np.sum(batch.mask)
            running += (loss + cfg.lam * penalty()) * n
            weight += n
            for k, (p, g) in enumerate(zip(params, grads)):
                if penalise and (is_weight[k] or cfg.penalize_biases):
                    g = g + cfg.lam * (2.0 * p if cfg.penalty == "ridge" else np.sign(p))
                p -= lr * g
        obj = running / weight
        if not np.isfinite(obj) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(f"objective became non-finite at epoch {epoch}")
        history.record(epoch, obj)
    return params, history


def lstm_train(cell, readout, data, cfg, rng=None):
    """SGD with exact BPTT gradients on masked MSE.

    Returns ``(cell, readout, history)``.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    W, b = cell.stacked()
    params, history = _sgd_recurrent(
        (W, b, readout.weight, readout.bias), _LSTM_WEIGHTS, _lstm_loss_grads, data, cfg, rng
    )
    W, b, Wy, by = params
    return LstmCell.from_stacked(W, b), Readout(Wy, by), history


def rnn_train(cell, data, cfg, rng=None):
    """SGD with exact BPTT gradients; returns ``(cell, history)``."""
    if rng is None:
        rng = make_rng(cfg.seed)
    codes = (_kernels.ACT_CODES[cell.activation], _kernels.ACT_CODES[cell.output_activation])
    params, history = _sgd_recurrent(
        (cell.w_xz, cell.w_zz, cell.b_x, cell.w_hz, cell.b_z),
        _RNN_WEIGHTS,
        lambda prm, d: _rnn_loss_grads(prm, d, codes),
        data, cfg, rng,
    )
    return RnnCell(*params, cell.activation, cell.output_activation), history


def lag_recall_task(rng, n_sequences, length, lag):
    """Binary +/-1 inputs; the target at step t is the input at step t - lag.

    The first ``lag`` steps are unscored.
    """
    X = rng.choice([-1.0, 1.0], size=(n_sequences, length, 1))
    Y = np.zeros_like(X)
    Y[:, lag:] = X[:, :-lag] if lag > 0 else X
    mask = np.zeros((n_sequences, length))
    mask[:, lag:] = 1.0
    return SequenceData(X, Y, mask)


def recall_accuracy(Y, data):
    """Fraction of scored steps where sign(prediction) equals the target sign."""
    hit = (np.sign(Y[..., 0]) == np.sign(data.targets[..., 0])) * data.mask
    return float(np.sum(hit) / np.sum(data.mask))


def regime_volatility_task(rng, n_sequences, length, vol_low=0.5, vol_high=2.0, switch_prob=0.05):
    """Returns from a two-state volatility regime; the target at t is r_{t+1}^2.

    Input at step t is ``(r_t, r_t^2)``.
    """
    X = np.empty((n_sequences, length, 2))
    Y = np.empty((n_sequences, length, 1))
    for s in range(n_sequences):
        state = rng.integers(2)
        r = np.empty(length + 1)
        for t in range(length + 1):
            if rng.random() < switch_prob:
                state = 1 - state
            r[t] = rng.normal(0.0, vol_high if state else vol_low)
        X[s, :, 0] = r[:-1]
        X[s, :, 1] = r[:-1] ** 2
        Y[s, :, 0] = r[1:] ** 2
    return SequenceData(X, Y)
