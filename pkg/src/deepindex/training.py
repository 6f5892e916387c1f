"""The penalised objective and its minimisation by back-propagated mini-batch SGD.

The trainer minimises the regularised empirical risk

    J(W, b) = (1/T) sum_i L(Y_i, Y_hat(X_i)) + lam * phi(W, b)

with ``phi`` a ridge (sum of squares) or lasso (sum of absolute values)
penalty on the weights, optionally on the biases as well.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .network import (
    UnsupportedActivationError,
    activation_backward,
    forward_batch,
    log_softmax,
)
from .numerics import ShapeError, as_matrix, make_rng, bernoulli_mask

log = logging.getLogger(__name__)

LOSSES = ("mse", "cross_entropy")
PENALTIES = ("ridge", "lasso", "none")


class TrainingDivergedError(RuntimeError):
    """The objective became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "mse"
    penalty: str = "ridge"
    lam: float = 0.0
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    dropout_p: float = 1.0
    seed: int = 0
    shuffle: bool = True
    penalize_biases: bool = False
    lr_decay: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.dropout_p <= 1.0:
            raise ValueError("dropout_p (keep probability) must lie in (0, 1]")

    def replace(self, **changes):
        fields = dict(self.__dict__)
        fields.update(changes)
        return TrainConfig(**fields)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    time_index: np.ndarray = None

    def __post_init__(self):
        self.inputs = as_matrix(self.inputs, "inputs")
        self.targets = as_matrix(self.targets, "targets")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows vs {self.targets.shape[0]} target rows"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset is empty")
        if self.time_index is not None:
            self.time_index = np.asarray(self.time_index)
            if len(self.time_index) != len(self):
                raise ShapeError("time index length differs from row count")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, rows):
        rows = np.asarray(rows)
        ti = None if self.time_index is None else self.time_index[rows]
        return Dataset(self.inputs[rows], self.targets[rows], ti)


@dataclass(frozen=True)
class Sparsity:
    """KL sparsity on the first hidden layer: ``beta * sum_j KL(rho || rho_hat_j)``."""

    rho: float = 0.01
    beta: float = 3.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.beta > 0 and not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")


_RHO_EPS = 1e-12


def kl_divergence(rho, rho_hat):
    """Elementwise Bernoulli KL(rho || rho_hat)."""
    rho_hat = np.clip(rho_hat, _RHO_EPS, 1.0 - _RHO_EPS)
    return rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))


def _kl_grad(rho, rho_hat):
    rho_hat = np.clip(rho_hat, _RHO_EPS, 1.0 - _RHO_EPS)
    return -rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat)


def _check_one_hot(y):
    if not (np.all((y == 0) | (y == 1)) and np.all(np.sum(y, axis=-1) == 1)):
        raise ValueError("cross_entropy targets must be one-hot")


def loss_rows(loss, Y, Y_hat):
    """Per-row loss values for targets ``Y`` and net outputs ``Y_hat``."""
    if Y.shape != Y_hat.shape:
        raise ShapeError(f"target shape {Y.shape} vs prediction shape {Y_hat.shape}")
    if loss == "mse":
        r = Y - Y_hat
        return np.sum(r * r, axis=-1)
    if loss == "cross_entropy":
        _check_one_hot(Y)
        return -np.sum(Y * log_softmax(Y_hat), axis=-1)
    raise ValueError(f"unknown loss {loss!r}")


def loss_grad_rows(loss, Y, Y_hat):
    """dL/dY_hat per row."""
    if loss == "mse":
        return 2.0 * (Y_hat - Y)
    if loss == "cross_entropy":
        return np.exp(log_softmax(Y_hat)) - Y
    raise ValueError(f"unknown loss {loss!r}")


def loss_value(loss, y, y_hat):
    """Loss of one observation. Cross-entropy takes logits in ``y_hat``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    return float(loss_rows(loss, y[None, :], y_hat[None, :])[0])


def _penalised(net, cfg):
    params = list(net.weights)
    if cfg.penalize_biases:
        params += list(net.biases)
    return params


def penalty_value(net, cfg):
    if cfg.penalty == "none" or cfg.lam == 0:
        return 0.0
    params = _penalised(net, cfg)
    if cfg.penalty == "ridge":
        return float(sum(np.sum(p * p) for p in params))
    return float(sum(np.sum(np.abs(p)) for p in params))


def _penalty_grad(p, cfg):
    if cfg.penalty == "ridge":
        return 2.0 * p
    # subgradient of |w| taken as 0 at w = 0
    return np.sign(p)


def objective(net, data, cfg, sparsity=None):
    """Mean loss over rows plus ``lam * phi`` (plus the KL term if given)."""
    y_hat, trace = forward_batch(net, data.inputs)
    value = float(np.mean(loss_rows(cfg.loss, data.targets, y_hat)))
    value += cfg.lam * penalty_value(net, cfg)
    if sparsity is not None and sparsity.beta > 0:
        rho_hat = np.mean(trace.layer_outputs[1], axis=0)
        value += sparsity.beta * float(np.sum(kl_divergence(sparsity.rho, rho_hat)))
    return value


def mean_loss(net, data, loss="mse"):
    return float(np.mean(loss_rows(loss, data.targets, forward_batch(net, data.inputs)[0])))


def batch_gradients(net, X, Y, loss, sparsity=None):
    """Gradients of the mean loss over the rows of ``X``.

    Returns ``(dW, db, mean_loss)`` with one array per layer. The penalty is
    not included; see :func:`sgd_train`.
    """
    for act in net.spec.activations:
        if act == "heaviside":
            raise UnsupportedActivationError("cannot back-propagate through heaviside")
    Y_hat, trace = forward_batch(net, X)
    n = X.shape[0]
    value = float(np.mean(loss_rows(loss, Y, Y_hat)))
    delta = loss_grad_rows(loss, Y, Y_hat) / n
    L = net.spec.depth
    dW = [None] * (L + 1)
    db = [None] * (L + 1)
    for l in range(L, -1, -1):
        Z = trace.layer_outputs[l]
        dW[l] = delta.T @ Z
        db[l] = np.sum(delta, axis=0)
        if l == 0:
            break
        grad_a = delta @ net.weights[l]
        if l == 1 and sparsity is not None and sparsity.beta > 0:
            rho_hat = np.mean(Z, axis=0)
            value += sparsity.beta * float(np.sum(kl_divergence(sparsity.rho, rho_hat)))
            grad_a = grad_a + sparsity.beta * _kl_grad(sparsity.rho, rho_hat) / n
        act = net.spec.activations[l - 1]
        delta = activation_backward(act, trace.pre_activations[l - 1], Z, grad_a)
    return dW, db, value


def backprop(net, x, y, loss="mse"):
    """Exact gradient of ``loss_value(loss, y, forward(net, x))``.

    Returns ``(dW, db)`` lists aligned with ``net.weights`` / ``net.biases``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    dW, db, _ = batch_gradients(net, x[None, :], y[None, :], loss)
    return dW, db


@dataclass
class History:
    epochs: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def record(self, epoch, obj, val=None):
        self.epochs.append(epoch)
        self.objective.append(obj)
        self.validation.append(val)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "objective", "validation_objective"])
            for e, o, v in zip(self.epochs, self.objective, self.validation):
                w.writerow([e, repr(o), "" if v is None else repr(v)])


def _serving_net(net, p):
    """Fold the dropout keep-probability into the first layer.

    Scaling inputs by ``p`` at prediction time is the same as scaling W_0 by ``p``.
    """
    if p == 1.0:
        return net.copy()
    out = net.copy()
    out.weights[0] = out.weights[0] * p
    return out


def sgd_train(net, data, cfg, rng=None, validation=None, sparsity=None):
    """Mini-batch SGD on the regularised objective.

    Each epoch shuffles the rows once (if ``cfg.shuffle``) and walks the
    resulting partition in batches. With ``cfg.dropout_p < 1`` every
    presented input row is multiplied by a fresh Bernoulli(p) mask; the
    returned net serves predictions with inputs scaled by ``p`` (folded into
    W_0).

    Returns ``(trained_net, history)``; history holds the objective after
    each epoch (epoch 0 is the starting point).
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    params = net.copy()
    T = len(data)
    p = cfg.dropout_p
    history = History()

    def evaluate(epoch):
        finite = all(np.all(np.isfinite(a)) for a in params.weights + params.biases)
        if not finite:
            raise TrainingDivergedError(f"parameters became non-finite at epoch {epoch}")
        serving = _serving_net(params, p)
        with np.errstate(over="ignore", invalid="ignore"):
            obj = objective(serving, data, cfg, sparsity)
        if not np.isfinite(obj):
            raise TrainingDivergedError(f"objective became non-finite at epoch {epoch}")
        val = None if validation is None else mean_loss(serving, validation, cfg.loss)
        history.record(epoch, obj, val)

    evaluate(0)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate / epoch if cfg.lr_decay else cfg.learning_rate
        order = rng.permutation(T) if cfg.shuffle else np.arange(T)
        # overflow is caught by the divergence check in evaluate()
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, T, cfg.batch_size):
                rows = order[start:start + cfg.batch_size]
                X = data.inputs[rows]
                if p < 1.0:
                    X = X * bernoulli_mask(rng, X.shape, p)
                dW, db, _ = batch_gradients(params, X, data.targets[rows], cfg.loss, sparsity)
                penalise = cfg.penalty != "none" and cfg.lam > 0
                for l in range(len(dW)):
                    gW = dW[l]
                    gb = db[l]
                    if penalise:
                        gW = gW + cfg.lam * _penalty_grad(params.weights[l], cfg)
                        if cfg.penalize_biases:
                            gb = gb + cfg.lam * _penalty_grad(params.biases[l], cfg)
                    params.weights[l] -= lr * gW
                    params.biases[l] -= lr * gb
        evaluate(epoch)
    return _serving_net(params, p), history
