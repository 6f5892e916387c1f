"""Stacked semi-affine layers with an affine read-out.

A net with hidden sizes ``(N_1, ..., N_L)`` computes

    Z0 = x
    Z(l+1) = f_(l+1)(W_l Z_l + b_l),   l = 0..L-1
    y_hat = W_L Z_L + b_L

Every ``W_l`` is stored as an ``(out, in)`` array, so a batch of row
observations ``X`` (T x in) maps to ``X @ W_l.T + b_l``.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, as_matrix, as_vector

ACTIVATIONS = ("sigmoid", "tanh", "relu", "heaviside", "max_pool", "identity", "softmax")
# elementwise activations; softmax and max_pool act on the whole vector
ELEMENTWISE = ("sigmoid", "tanh", "relu", "heaviside", "identity")


class UnsupportedActivationError(ValueError):
    """Raised when a gradient is requested through an activation without one."""


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def activate(kind, z):
    """Apply activation ``kind`` along the last axis of ``z``.

    ``max_pool`` reduces the last axis to length 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "heaviside":
        return (z > 0).astype(np.float64)
    if kind == "identity":
        return z.copy()
    if kind == "softmax":
        return softmax(z)
    if kind == "max_pool":
        return np.max(z, axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def activation_apply(kind, z):
    """Single-vector form of :func:`activate`."""
    return activate(kind, as_vector(z, "z"))


def activation_backward(kind, z, a, grad_a):
    """Pull ``dJ/da`` back to ``dJ/dz`` for a batch (rows) of pre-activations."""
    if kind == "sigmoid":
        return grad_a * a * (1.0 - a)
    if kind == "tanh":
        return grad_a * (1.0 - a * a)
    if kind == "relu":
        return grad_a * (z > 0)
    if kind == "identity":
        return grad_a
    if kind == "softmax":
        return a * (grad_a - np.sum(grad_a * a, axis=-1, keepdims=True))
    if kind == "max_pool":
        out = np.zeros_like(z)
        idx = np.argmax(z, axis=-1)
        out[np.arange(z.shape[0]), idx] = grad_a[:, 0]
        return out
    if kind == "heaviside":
        raise UnsupportedActivationError("heaviside has zero gradient almost everywhere")
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_sizes: tuple = ()
    activations: tuple = ()
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(n) for n in self.hidden_sizes))
        object.__setattr__(self, "activations", tuple(str(a) for a in self.activations))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(n < 1 for n in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if len(self.activations) != len(self.hidden_sizes):
            raise ValueError("need exactly one activation per hidden layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def depth(self):
        return len(self.hidden_sizes)

    def layer_shapes(self):
        """``(out, in)`` shape of each weight matrix W_0..W_L."""
        shapes = []
        fan_in = self.input_dim
        for n, act in zip(self.hidden_sizes, self.activations):
            shapes.append((n, fan_in))
            fan_in = 1 if act == "max_pool" else n
        shapes.append((self.output_dim, fan_in))
        return shapes

    def n_params(self):
        return sum(o * i + o for o, i in self.layer_shapes())


@dataclass
class DeepNet:
    spec: NetworkSpec
    weights: list
    biases: list

    def __post_init__(self):
        shapes = self.spec.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} weight/bias pairs")
        self.weights = [as_matrix(w, f"W{l}") for l, w in enumerate(self.weights)]
        self.biases = [as_vector(b, f"b{l}") for l, b in enumerate(self.biases)]
        for l, (shape, w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != shape or b.shape != (shape[0],):
                raise ShapeError(
                    f"layer {l}: expected W{shape} b({shape[0]},), got W{w.shape} b{b.shape}"
                )

    def copy(self):
        return DeepNet(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self):
        return self.spec.n_params()

    def flat_params(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.n_params():
            raise ShapeError(f"expected {self.n_params()} parameters, got {theta.size}")
        ws, bs, pos = [], [], 0
        for o, i in self.spec.layer_shapes():
            ws.append(theta[pos:pos + o * i].reshape(o, i))
            pos += o * i
            bs.append(theta[pos:pos + o])
            pos += o
        return DeepNet(self.spec, ws, bs)


@dataclass
class ForwardTrace:
    layer_outputs: list  # Z_0 .. Z_L, each (T, width)
    pre_activations: list = field(default_factory=list)  # W_l Z_l + b_l for l < L
    output: np.ndarray = None


def init_weights(spec, rng, scheme="glorot_uniform", scale=1.0):
    """Fresh net for ``spec``; biases start at zero.

    ``glorot_uniform`` draws from U(-a, a), a = scale * sqrt(6 / (fan_in + fan_out)).
    ``normal`` draws N(0, scale**2 / fan_in). ``zero`` gives all-zero weights.
    """
    weights, biases = [], []
    for fan_out, fan_in in spec.layer_shapes():
        if scheme == "zero" or scale == 0.0:
            w = np.zeros((fan_out, fan_in))
        elif scheme == "glorot_uniform":
            a = scale * np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(fan_out, fan_in))
        elif scheme == "normal":
            w = rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_out, fan_in))
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return DeepNet(spec, weights, biases)


def forward_batch(net, X):
    """Forward pass on the rows of ``X``; returns ``(Y_hat, trace)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.spec.input_dim:
        raise ShapeError(f"input must be (T, {net.spec.input_dim}), got {X.shape}")
    Z = X
    outputs, pres = [Z], []
    for l, act in enumerate(net.spec.activations):
        pre = Z @ net.weights[l].T + net.biases[l]
        Z = activate(act, pre)
        pres.append(pre)
        outputs.append(Z)
    y_hat = Z @ net.weights[-1].T + net.biases[-1]
    return y_hat, ForwardTrace(outputs, pres, y_hat)


def forward(net, x):
    """Single observation forward pass; returns ``(y_hat, trace)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.spec.input_dim:
        raise ShapeError(f"input must have length {net.spec.input_dim}, got shape {x.shape}")
    y_hat, trace = forward_batch(net, x[None, :])
    trace = ForwardTrace(
        [z[0] for z in trace.layer_outputs], [p[0] for p in trace.pre_activations], y_hat[0]
    )
    return y_hat[0], trace


def predict(net, X):
    return forward_batch(net, X)[0]
