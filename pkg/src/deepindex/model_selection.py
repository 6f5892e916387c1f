"""Choosing lambda and layer sizes by time-split cross-validation or a
regularisation path. Also home to SURE and the dropout/ridge equivalence check."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .network import DeepNet, init_weights, predict
from .numerics import as_matrix, as_vector, bernoulli_mask, make_rng
from .training import Dataset, mean_loss, sgd_train

# relative tolerance under which two validation losses count as tied
TIE_RTOL = 1e-12


def time_splits(n_rows, k):
    """Contiguous, ordered, near-equal (+/- 1 row) folds as ``(start, stop)`` pairs."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n_rows < 2 * k:
        raise ValueError(f"{n_rows} rows cannot fill {k} folds of at least 2 rows")
    bounds = np.array_split(np.arange(n_rows), k)
    return [(int(b[0]), int(b[-1]) + 1) for b in bounds]


def fold_indices(data, k, rng=None):
    """Validation row sets: contiguous time blocks when the data carries a time
    index (or no generator is given), otherwise a seeded random partition."""
    n = len(data)
    if data.time_index is not None or rng is None:
        return [np.arange(a, b) for a, b in time_splits(n, k)]
    time_splits(n, k)  # same size checks
    return [np.sort(part) for part in np.array_split(rng.permutation(n), k)]


@dataclass
class CVResult:
    rows: list  # dicts: candidate, fold, lam, train_objective, validation_loss
    summary: list  # dicts: candidate, lam, n_params, mean_validation_loss
    winner: dict
    specs: list = field(default_factory=list)

    def to_csv(self, path):
        write_table(path, self.rows, ["candidate", "fold", "lam", "train_objective", "validation_loss"])


def write_table(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def pick_winner(summary):
    """Lowest mean validation loss; ties go to fewer parameters, then larger
    lambda, then the earlier listed candidate."""
    best = min(r["mean_validation_loss"] for r in summary)
    tol = TIE_RTOL * max(abs(best), 1e-300)
    tied = [r for r in summary if r["mean_validation_loss"] - best <= tol]
    return min(tied, key=lambda r: (r["n_params"], -r["lam"], r["order"]))


def _fit_and_score(spec, lam, train, valid, cfg, fold):
    net = init_weights(spec, make_rng(cfg.seed, 0, fold))
    fcfg = cfg.replace(lam=lam)
    trained, hist = sgd_train(net, train, fcfg, make_rng(cfg.seed, 1, fold))
    return hist.objective[-1], mean_loss(trained, valid, cfg.loss)


def cross_validate(specs, lambdas, data, k, cfg, rng=None, threads=1):
    """Score every (spec, lambda) pair by k-fold validation loss.

    Each candidate trains on k-1 folds and is scored on the held-out one,
    rotating through all folds. Fits for the same fold share their seeds, so
    the outcome does not depend on where a candidate sits in the list.
    """
    specs = list(specs)
    lambdas = list(lambdas)
    if not specs or not lambdas:
        raise ValueError("need at least one spec and one lambda")
    folds = fold_indices(data, k, rng)
    n = len(data)
    jobs = []
    for ci, spec in enumerate(specs):
        for li, lam in enumerate(lambdas):
            for fi, val_rows in enumerate(folds):
                train_rows = np.setdiff1d(np.arange(n), val_rows)
                jobs.append((ci, li, fi, spec, lam, train_rows, val_rows))

    def run(job):
        ci, li, fi, spec, lam, tr, va = job
        return _fit_and_score(spec, lam, data.subset(tr), data.subset(va), cfg, fi)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    rows, summary = [], []
    by_candidate = {}
    for (ci, li, fi, spec, lam, _, _), (tr_obj, va_loss) in zip(jobs, results):
        cand = ci * len(lambdas) + li
        rows.append(dict(candidate=cand, fold=fi, lam=float(lam),
                         train_objective=float(tr_obj), validation_loss=float(va_loss)))
        by_candidate.setdefault(cand, (spec, lam, []))[2].append(va_loss)
    for cand in sorted(by_candidate):
        spec, lam, losses = by_candidate[cand]
        summary.append(dict(candidate=cand, order=cand, lam=float(lam), n_params=spec.n_params(),
                            mean_validation_loss=float(np.mean(losses))))
    winner = pick_winner(summary)
    return CVResult(rows, summary, winner, specs)


@dataclass
class PathResult:
    rows: list  # dicts: lam, train_objective, validation_loss
    best_lam: float
    nets: list

    def to_csv(self, path):
        write_table(path, self.rows, ["lam", "train_objective", "validation_loss"])


def regularization_path(spec, train, validate, lambdas, cfg, net=None):
    """Fit along a sorted lambda grid, warm-starting each fit from the previous
    one, and report the validation-optimal lambda (ties go to the larger)."""
    lambdas = [float(l) for l in lambdas]
    if not lambdas:
        raise ValueError("lambda grid is empty")
    if lambdas != sorted(lambdas) and lambdas != sorted(lambdas, reverse=True):
        raise ValueError("lambda grid must be sorted")
    current = net if net is not None else init_weights(spec, make_rng(cfg.seed, 0))
    rows, nets = [], []
    for i, lam in enumerate(lambdas):
        current, hist = sgd_train(current, train, cfg.replace(lam=lam), make_rng(cfg.seed, 1, i))
        nets.append(current)
        rows.append(dict(lam=lam, train_objective=hist.objective[-1],
                         validation_loss=mean_loss(current, validate, cfg.loss)))
    best = min(r["validation_loss"] for r in rows)
    tol = TIE_RTOL * max(abs(best), 1e-300)
    best_lam = max(r["lam"] for r in rows if r["validation_loss"] - best <= tol)
    return PathResult(rows, best_lam, nets)


# SURE -------------------------------------------------------------------------

@dataclass
class SureEstimate:
    err_in: float
    df: float
    sigma2: float
    err_hat: float
    approximate: bool = False


@dataclass(frozen=True)
class RidgeSmoother:
    """Ridge regression ``y_hat = X (X'X + lam I)^-1 X' y`` (no intercept)."""

    lam: float = 0.0

    def hat_matrix(self, X):
        X = as_matrix(X, "X")
        p = X.shape[1]
        return X @ np.linalg.solve(X.T @ X + self.lam * np.eye(p), X.T)

    def fit(self, X, y):
        X = as_matrix(X, "X")
        p = X.shape[1]
        return np.linalg.solve(X.T @ X + self.lam * np.eye(p), X.T @ y)

    def df(self, X):
        return float(np.trace(self.hat_matrix(X)))


def _scalar_targets(data):
    if data.targets.shape[1] != 1:
        raise ValueError("SURE is implemented for scalar outputs only")
    return data.targets[:, 0]


def sure_estimate(predictor, data, sigma2, cfg=None, eps=1e-3, probe_rows=None):
    """Stein's risk estimate ``||Y - Y_hat||^2 + 2 sigma2 * df``.

    ``predictor`` is a :class:`RidgeSmoother` (exact df = trace of the hat
    matrix) or a fitted :class:`DeepNet`. For a net, df is approximated by
    refitting from the fitted weights with target ``Y_i + eps`` and taking
    the slope of ``Y_hat_i``; ``cfg`` sets the refit and ``probe_rows``
    (default all rows) limits which rows are perturbed, scaling the sum up.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    y = _scalar_targets(data)
    if isinstance(predictor, RidgeSmoother):
        S = predictor.hat_matrix(data.inputs)
        y_hat = S @ y
        r = y - y_hat
        df = float(np.trace(S))
        err_in = float(r @ r)
        return SureEstimate(err_in, df, sigma2, err_in + 2.0 * sigma2 * df)
    if isinstance(predictor, DeepNet):
        if cfg is None:
            raise ValueError("refit config required for a net")
        df = _net_df(predictor, data, cfg, eps, probe_rows)
        r = y - predict(predictor, data.inputs)[:, 0]
        err_in = float(r @ r)
        return SureEstimate(err_in, df, sigma2, err_in + 2.0 * sigma2 * df, approximate=True)
    raise TypeError(f"unsupported predictor {type(predictor).__name__}")


def _net_df(net, data, cfg, eps, probe_rows):
    T = len(data)
    rows = np.arange(T) if probe_rows is None else np.asarray(probe_rows)
    base, _ = sgd_train(net, data, cfg, make_rng(cfg.seed, 7))
    base_fit = predict(base, data.inputs)[:, 0]
    total = 0.0
    for i in rows:
        Y = data.targets.copy()
        Y[i, 0] += eps
        refit, _ = sgd_train(net, Dataset(data.inputs, Y, data.time_index), cfg, make_rng(cfg.seed, 7))
        total += (predict(refit, data.inputs[i:i + 1])[0, 0] - base_fit[i]) / eps
    return float(total * T / len(rows))


def estimate_sigma2(X, y):
    """Residual variance of an OLS fit, RSS / (T - p)."""
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    T, p = X.shape
    if T <= p:
        raise ValueError("need more rows than columns to estimate sigma2")
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ w
    return float(r @ r / (T - p))


# dropout / ridge ---------------------------------------------------------------

@dataclass
class RidgeEquivalenceReport:
    p: float
    gamma: np.ndarray
    w_marginal: np.ndarray
    w_closed: np.ndarray
    discrepancy: float
    n_mc: int


def _solve_active(A, c, active):
    w = np.zeros(len(c))
    if active.any():
        sub = A[np.ix_(active, active)]
        if np.linalg.matrix_rank(sub) < sub.shape[0]:
            raise np.linalg.LinAlgError("penalised normal equations are rank deficient")
        w[active] = np.linalg.solve(sub, c[active])
    return w


def dropout_closed_form(X, y, p):
    """Minimiser of ``||y - p X w||^2 + p (1 - p) ||Gamma w||^2`` with
    ``Gamma = diag(X'X)^(1/2)``. Columns that are identically zero get weight 0."""
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    gamma = np.sqrt(np.sum(X * X, axis=0))
    A = p * p * (X.T @ X) + p * (1.0 - p) * np.diag(gamma ** 2)
    c = p * (X.T @ y)
    return _solve_active(A, c, gamma > 0), gamma


def dropout_monte_carlo(X, y, p, n_mc, rng, chunk=4096):
    """Minimiser of the average of ``||y - (D * X) w||^2`` over ``n_mc``
    Bernoulli(p) masks ``D``."""
    X = np.ascontiguousarray(as_matrix(X, "X"))
    y = np.ascontiguousarray(as_vector(y, "y"))
    T, d = X.shape
    A = np.zeros((d, d))
    c = np.zeros(d)
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        masks = bernoulli_mask(rng, (m, T, d), p)
        dA, dc = _kernels.dropout_moments(X, y, masks)
        A += dA
        c += dc
        done += m
    active = np.sum(X * X, axis=0) > 0
    return _solve_active(A / n_mc, c / n_mc, active)


def dropout_ridge_check(X, y, p, n_mc, rng):
    """Compare the Monte-Carlo dropout minimiser with its closed-form ridge twin."""
    if not 0.0 < p < 1.0:
        raise ValueError("keep probability must lie strictly between 0 and 1")
    w_closed, gamma = dropout_closed_form(X, y, p)
    w_mc = dropout_monte_carlo(X, y, p, n_mc, rng)
    return RidgeEquivalenceReport(p, gamma, w_mc, w_closed, float(np.linalg.norm(w_mc - w_closed)), n_mc)
