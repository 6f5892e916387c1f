"""Bottleneck auto-encoder and the communal ranking of assets built on it.

The auto-encoder is a one-hidden-layer :class:`~deepindex.network.DeepNet`
with ``M < N`` hidden units and an affine output, trained to reproduce its
(standardised) input. With a sigmoid bottleneck a KL penalty pulls each unit's
mean activation towards a target rate ``rho``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, init_weights, predict
from .numerics import as_matrix, make_rng
from .panel import ReturnsPanel
from .training import Dataset, Sparsity, TrainConfig, sgd_train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AutoencoderSpec:
    input_dim: int
    bottleneck: int = 4
    activation: str = "sigmoid"
    sparsity_rho: float = 0.01
    sparsity_beta: float = 3.0

    def __post_init__(self):
        if not 1 <= self.bottleneck < self.input_dim:
            raise ValueError(
                f"bottleneck must satisfy 1 <= M < N, got M={self.bottleneck}, N={self.input_dim}"
            )
        if self.sparsity_beta < 0:
            raise ValueError("sparsity_beta must be >= 0")
        if self.sparsity_beta > 0:
            if not 0.0 < self.sparsity_rho < 1.0:
                raise ValueError("sparsity_rho must lie in (0, 1)")
            if self.activation != "sigmoid":
                raise ValueError("the KL sparsity penalty needs a sigmoid bottleneck")

    def network_spec(self):
        return NetworkSpec(self.input_dim, (self.bottleneck,), (self.activation,), self.input_dim)


# training defaults for the bottleneck net; the trainer is plain SGD
AE_TRAIN = TrainConfig(loss="mse", penalty="none", learning_rate=0.05, batch_size=32, epochs=200)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray  # bool mask of non-constant columns

    @classmethod
    def fit(cls, values):
        mean = values.mean(axis=0)
        scale = values.std(axis=0)
        active = scale > 0
        return cls(mean, np.where(active, scale, 1.0), active)

    def transform(self, values):
        return ((values - self.mean) / self.scale)[:, self.active]

    def inverse(self, z):
        out = np.tile(self.mean, (z.shape[0], 1))
        out[:, self.active] = z * self.scale[self.active] + self.mean[self.active]
        return out


@dataclass
class Autoencoder:
    spec: AutoencoderSpec
    net: object  # DeepNet on standardised active columns
    standardizer: Standardizer

    def encode(self, values):
        from .network import activate

        z = self.standardizer.transform(values)
        return activate(self.spec.activation, z @ self.net.weights[0].T + self.net.biases[0])

    def reconstruct(self, values):
        """Reconstruction in the original units; constant columns pass through as their mean."""
        return self.standardizer.inverse(predict(self.net, self.standardizer.transform(values)))


def _values(panel):
    return panel.values if isinstance(panel, ReturnsPanel) else as_matrix(panel, "panel")


def train_autoencoder(spec, panel, cfg=AE_TRAIN, rng=None, init="glorot_uniform"):
    """Fit the bottleneck net to reproduce the standardised panel.

    ``spec.input_dim`` counts the panel's non-constant columns; constant
    columns are dropped before training and reported by the standardizer.
    """
    values = _values(panel)
    if values.shape[0] < 2:
        raise ValueError("need at least 2 rows to train an auto-encoder")
    std = Standardizer.fit(values)
    n_active = int(std.active.sum())
    if n_active != spec.input_dim:
        raise ValueError(f"spec expects {spec.input_dim} inputs, panel has {n_active} non-constant columns")
    if rng is None:
        rng = make_rng(cfg.seed)
    Z = std.transform(values)
    net = init_weights(spec.network_spec(), rng, init)
    sparsity = Sparsity(spec.sparsity_rho, spec.sparsity_beta) if spec.sparsity_beta > 0 else None
    net, history = sgd_train(net, Dataset(Z, Z), cfg, rng, sparsity=sparsity)
    ae = Autoencoder(spec, net, std)
    ae.history = history
    return ae


def reconstruction_error(ae, panel):
    """Mean squared reconstruction error per row on the standardised scale."""
    values = _values(panel)
    Z = ae.standardizer.transform(values)
    R = Z - predict(ae.net, Z)
    return float(np.mean(np.sum(R * R, axis=1)))


# PCA -------------------------------------------------------------------------

@dataclass
class PcaBasis:
    components: np.ndarray  # (N, rank), orthonormal columns
    center: np.ndarray  # (N,)
    rank: int
    explained_variance: np.ndarray  # (rank,)
    total_variance: float

    def transform(self, values):
        return (values - self.center) @ self.components

    def reconstruct(self, values):
        return self.transform(values) @ self.components.T + self.center


def pca_fit(panel, rank):
    values = _values(panel)
    T, N = values.shape
    if not 0 <= rank <= min(T, N):
        raise ValueError(f"rank {rank} exceeds min(rows, cols) = {min(T, N)}")
    center = values.mean(axis=0)
    _, s, Vt = np.linalg.svd(values - center, full_matrices=False)
    var = s ** 2 / T
    return PcaBasis(Vt[:rank].T.copy(), center, rank, var[:rank], float(np.sum(var)))


def pca_error(panel, rank):
    """Mean squared reconstruction error per row of the rank-``rank`` PCA fit."""
    values = _values(panel)
    R = values - pca_fit(values, rank).reconstruct(values)
    return float(np.mean(np.sum(R * R, axis=1)))


# communal ranking ----------------------------------------------------------------

@dataclass
class CommunalRanking:
    assets: list
    distances: np.ndarray  # per asset, aligned with ``assets``; NaN for excluded
    order: np.ndarray  # asset positions, most communal first
    excluded: list

    def ranked_assets(self):
        return [self.assets[j] for j in self.order]

    def rows(self):
        return [(r + 1, self.assets[j], float(self.distances[j])) for r, j in enumerate(self.order)]

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "asset", "distance"])
            for rank, asset, dist in self.rows():
                w.writerow([rank, asset, format(dist, ".17g")])


def communal_distances(values, recon):
    """``||x_j - x_hat_j|| / ||x_j||`` per column (inf for an all-zero column)."""
    num = np.linalg.norm(values - recon, axis=0)
    den = np.linalg.norm(values, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)


def communal_rank(ae, panel, assets=None):
    """Rank assets by normalised distance to their own reconstruction.

    Constant columns cannot be standardised and are left out of the order.
    Ties in distance go to the lower asset index.
    """
    values = _values(panel)
    if assets is None:
        assets = panel.assets if isinstance(panel, ReturnsPanel) else [str(j) for j in range(values.shape[1])]
    active = ae.standardizer.active
    if values.shape[1] != active.size:
        raise ValueError(f"panel has {values.shape[1]} columns, auto-encoder expects {active.size}")
    dist = communal_distances(values, ae.reconstruct(values))
    dist = np.where(active, dist, np.nan)
    for j in np.flatnonzero(active & np.isinf(dist)):
        log.warning("asset %s has a zero return column; ranked last", assets[j])
    eligible = np.flatnonzero(active)
    order = eligible[np.lexsort((eligible, dist[eligible]))]
    excluded = [assets[j] for j in np.flatnonzero(~active)]
    if excluded:
        log.warning("excluded constant columns from ranking: %s", ", ".join(excluded))
    return CommunalRanking(list(assets), dist, order, excluded)
