"""Smart indexing: communal basis selection and two index trackers.

* the equal-weight tracker holds the ``k`` most communal assets in equal
  proportion, rebalanced every period;
* the deep feature policy (DFP) regresses the per-period index return on the
  returns of the ``k`` most and ``k`` least communal assets through a small
  feedforward net.

Reports compare compounded tracker and index paths over a date window. The
first date of a window is the inception date (level 1.0); the returns of
the following dates compound from there.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AE_TRAIN, AutoencoderSpec, communal_rank, train_autoencoder
from .network import NetworkSpec, init_weights, predict
from .numerics import finite_diff_grad, make_rng
from .training import Dataset, TrainConfig, sgd_train

# gross implied exposure (sum of |d index / d asset|) above which a DFP is flagged
EXTREME_GROSS_EXPOSURE = 3.0

DFP_TRAIN = TrainConfig(loss="mse", penalty="ridge", lam=0.0, learning_rate=0.05, batch_size=32, epochs=300)


@dataclass
class BasisSelection:
    top: list
    bottom: list
    k: int

    def __post_init__(self):
        if set(self.top) & set(self.bottom):
            raise ValueError("top and bottom sets overlap")

    @property
    def assets(self):
        return list(self.top) + list(self.bottom)


def select_basis(panel, ae_spec=None, k=10, cfg=AE_TRAIN, rng=None):
    """Train the auto-encoder on ``panel`` and pick the ``k`` most and ``k``
    least communal assets. Returns ``(selection, ranking, autoencoder)``."""
    if rng is None:
        rng = make_rng(cfg.seed)
    n_active = int(np.sum(panel.values.std(axis=0) > 0))
    if k < 1 or 2 * k > n_active:
        raise ValueError(f"k={k} needs 2k <= {n_active} eligible assets")
    if ae_spec is None:
        ae_spec = AutoencoderSpec(n_active)
    ae = train_autoencoder(ae_spec, panel, cfg, rng)
    ranking = communal_rank(ae, panel)
    ordered = ranking.ranked_assets()
    selection = BasisSelection(ordered[:k], ordered[-k:][::-1], k)
    return selection, ranking, ae


# trackers --------------------------------------------------------------------------

@dataclass
class EqualWeightTracker:
    assets: list

    def __post_init__(self):
        if not self.assets:
            raise ValueError("basis is empty")

    def returns(self, panel):
        return panel.values[:, panel.columns(self.assets)].mean(axis=1)


@dataclass
class DfpTracker:
    net: object
    assets: list
    trained: bool = True

    def returns(self, panel):
        return predict(self.net, panel.values[:, panel.columns(self.assets)])[:, 0]

    def implied_weights(self, panel):
        """Sensitivity of the mean tracker return to a parallel shift in each input."""
        X = panel.values[:, panel.columns(self.assets)]

        def mean_out(shift):
            return float(np.mean(predict(self.net, X + shift)))

        return finite_diff_grad(mean_out, np.zeros(X.shape[1]), h=1e-4)


def _fold_scaling(net, x_mean, x_scale, y_mean, y_scale):
    """Absorb input standardisation and output de-standardisation into the weights."""
    out = net.copy()
    out.biases[0] = out.biases[0] - out.weights[0] @ (x_mean / x_scale)
    out.weights[0] = out.weights[0] / x_scale
    out.weights[-1] = out.weights[-1] * y_scale
    out.biases[-1] = out.biases[-1] * y_scale + y_mean
    return out


def train_dfp(panel, basis, index, spec=None, cfg=DFP_TRAIN, rng=None):
    """Fit the DFP net mapping basis-asset returns to the index return.

    Inputs and target are standardised for training; the scaling is folded
    back into the returned net, which works on raw returns.
    """
    assets = basis.assets if isinstance(basis, BasisSelection) else list(basis)
    if spec is None:
        spec = NetworkSpec(len(assets), (4, 2), ("tanh", "tanh"), 1)
    if spec.input_dim != len(assets) or spec.output_dim != 1:
        raise ValueError(f"DFP spec must map {len(assets)} inputs to 1 output")
    if rng is None:
        rng = make_rng(cfg.seed)
    X = panel.values[:, panel.columns(assets)]
    y = index.aligned(panel.dates)
    x_mean, x_scale = X.mean(axis=0), X.std(axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    y_mean, y_scale = y.mean(), y.std()
    y_scale = y_scale if y_scale > 0 else 1.0
    data = Dataset((X - x_mean) / x_scale, ((y - y_mean) / y_scale)[:, None])
    net = init_weights(spec, rng)
    net, history = sgd_train(net, data, cfg, rng)
    tracker = DfpTracker(_fold_scaling(net, x_mean, x_scale, y_mean, y_scale), assets, cfg.epochs > 0)
    tracker.history = history
    return tracker


# reports ---------------------------------------------------------------------------

@dataclass
class TrackerReport:
    label: str
    start: str
    end: str
    dates: list
    tracker_path: np.ndarray
    index_path: np.ndarray
    tracking_error: float
    mean_abs_deviation: float
    terminal_gap: float
    flags: list = field(default_factory=list)

    def metrics(self):
        return {
            "label": self.label,
            "start": self.start,
            "end": self.end,
            "periods": len(self.dates) - 1,
            "tracking_error": self.tracking_error,
            "mean_abs_deviation": self.mean_abs_deviation,
            "terminal_gap": self.terminal_gap,
            "tracker_terminal": float(self.tracker_path[-1]),
            "index_terminal": float(self.index_path[-1]),
            "flags": list(self.flags),
        }

    def paths_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "tracker", "index"])
            for d, a, b in zip(self.dates, self.tracker_path, self.index_path):
                w.writerow([d, format(a, ".17g"), format(b, ".17g")])


def build_report(label, dates, tracker_returns, index_returns, flags=()):
    """Report for returns on ``dates``; ``dates[0]`` is the inception date."""
    if len(dates) < 2:
        raise ValueError(f"window {label!r} needs at least 2 dates")
    tr = np.asarray(tracker_returns, dtype=np.float64)[1:]
    ix = np.asarray(index_returns, dtype=np.float64)[1:]
    diff = tr - ix
    tpath = np.concatenate([[1.0], np.cumprod(1.0 + tr)])
    ipath = np.concatenate([[1.0], np.cumprod(1.0 + ix)])
    return TrackerReport(
        label=label,
        start=str(dates[0]),
        end=str(dates[-1]),
        dates=[str(d) for d in dates],
        tracker_path=tpath,
        index_path=ipath,
        tracking_error=float(np.std(diff, ddof=1)) if diff.size > 1 else 0.0,
        mean_abs_deviation=float(np.mean(np.abs(diff))),
        terminal_gap=float(tpath[-1] - ipath[-1]),
        flags=list(flags),
    )


def _window_panel(panel, window):
    start, end = window[0], window[1]
    rows = panel.window_rows(start, end)
    if rows.size == 0:
        raise ValueError(f"window {start}..{end} is empty")
    return panel.window(start, end)


def equal_weight_tracker(panel, basis, index, window, label="window"):
    sub = _window_panel(panel, window)
    tracker = EqualWeightTracker(list(basis))
    return build_report(label, sub.dates, tracker.returns(sub), index.aligned(sub.dates))


def evaluate_tracker(model, panel, index, windows, labels=None, threads=1):
    """One report per ``(start, end)`` window; windows may overlap or precede
    the training period."""
    if labels is None:
        labels = [f"{w[0]}..{w[1]}" for w in windows]

    def one(item):
        label, window = item
        sub = _window_panel(panel, window)
        missing = [a for a in model.assets if a not in sub.assets]
        if missing:
            raise KeyError(f"asset {missing[0]} missing from window {label}")
        flags = []
        if isinstance(model, DfpTracker):
            if not model.trained:
                flags.append("untrained")
            gross = float(np.sum(np.abs(model.implied_weights(sub))))
            if gross > EXTREME_GROSS_EXPOSURE:
                flags.append(f"extreme_implied_weights(gross={gross:.3g})")
        return build_report(label, sub.dates, model.returns(sub), index.aligned(sub.dates), flags)

    items = list(zip(labels, windows))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def reports_to_json(reports, path=None, extra=None):
    payload = {"reports": [r.metrics() for r in reports]}
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text
