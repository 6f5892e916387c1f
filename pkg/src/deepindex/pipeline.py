"""End-to-end smart-indexing run and its on-disk artifacts.

Stages run in a fixed order; each draws from its own RNG stream so that
changing one stage's settings does not perturb the others:

    data (stream 0) -> select_basis (1) -> equal_weight_tracker
    -> train_dfp (2) -> evaluate_tracker
"""

import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from ._accel import backend
from .autoencoder import AutoencoderSpec
from .config import ConfigError
from .indexing import equal_weight_tracker, evaluate_tracker, select_basis, train_dfp
from .network import NetworkSpec
from .numerics import make_rng
from .panel import IndexSeries, ingest_csv, ingest_index_csv
from .serialize import save_net
from .synth import synth_market

log = logging.getLogger(__name__)

FAILED = "FAILED"


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def versions():
    out = {"deepindex": __version__, "numpy": np.__version__, "python": platform.python_version()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    return out


def out_path(output_dir, name):
    """Path of artifact ``name`` inside ``output_dir``; refuses anything that escapes it."""
    root = os.path.realpath(output_dir)
    path = os.path.realpath(os.path.join(root, name))
    if os.path.commonpath([root, path]) != root:
        raise ValueError(f"artifact {name!r} would leave the output directory")
    return path


def write_json(path, payload):
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_market(cfg, seed):
    """``(panel, index, truth)``; ``truth`` is the synthetic market or None."""
    if cfg.synthetic is not None:
        market = synth_market(cfg.synthetic, make_rng(seed, 0))
        return market.panel, market.index, market
    src = cfg.csv
    panel = ingest_csv(src.path, src.date_column, src.kind)
    if src.index_path is None:
        log.warning("no index file given; tracking the equal-weight average of the panel")
        index = IndexSeries.weighted(panel, np.full(panel.values.shape[1], 1.0 / panel.values.shape[1]))
    else:
        index = ingest_index_csv(src.index_path, src.date_column, src.index_kind, src.index_column)
    return panel, index, None


def train_panel(cfg, panel):
    w = cfg.train_window
    return panel if w is None else panel.window(w.start, w.end)


def ae_spec_for(cfg, panel):
    n_active = int(np.sum(panel.values.std(axis=0) > 0))
    a = cfg.autoencoder
    return AutoencoderSpec(n_active, a.bottleneck, a.activation, a.sparsity_rho, a.sparsity_beta)


def dfp_spec_for(cfg, k):
    return NetworkSpec(2 * k, cfg.dfp.hidden_sizes, cfg.dfp.activations, 1)


def eval_windows(cfg, panel):
    """``[(label, (start, end))]``: the training window first, then the configured ones."""
    tw = cfg.train_window
    first = ("train", (str(tw.start), str(tw.end))) if tw else (
        "train", (str(panel.dates[0]), str(panel.dates[-1])))
    return [first] + [(w.label, (str(w.start), str(w.end))) for w in cfg.windows]


def check_k(cfg, panel):
    n = panel.values.shape[1]
    if 2 * cfg.k > n:
        raise ConfigError(f"k={cfg.k} exceeds half of the {n} assets")


def _stage(name, fn, *args, **kw):
    log.info("stage %s", name)
    try:
        return fn(*args, **kw)
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg, seed=None, threads=1, output_dir=None):
    """Run every stage and write artifacts; returns the report payload.

    On failure a ``FAILED`` marker naming the stage is written next to any
    partial artifacts and :class:`StageError` is raised.
    """
    seed = cfg.seed if seed is None else seed
    if seed is None:
        raise ConfigError("a seed is required")
    output_dir = output_dir or cfg.output_dir
    os.makedirs(output_dir, exist_ok=True)
    marker = out_path(output_dir, FAILED)
    if os.path.exists(marker):
        os.remove(marker)

    manifest = {
        "config": cfg.to_dict(),
        "seed": seed,
        "threads": threads,
        "backend": backend(),
        "versions": versions(),
        "command": "run",
    }
    manifest["config"]["seed"] = seed
    manifest["config"]["output_dir"] = output_dir
    write_json(out_path(output_dir, "manifest.json"), manifest)

    stage = "load"
    try:
        panel, index, _ = _stage("load", load_market, cfg, seed)
        check_k(cfg, panel)
        panel.to_csv(out_path(output_dir, "returns.csv"))
        index.to_csv(out_path(output_dir, "index.csv"))
        train = train_panel(cfg, panel)
        windows = eval_windows(cfg, panel)
        labels = [w[0] for w in windows]
        spans = [w[1] for w in windows]

        stage = "select_basis"
        ae_cfg = cfg.autoencoder.train
        sel, ranking, ae = _stage(stage, select_basis, train, ae_spec_for(cfg, train), cfg.k, ae_cfg,
                                  make_rng(seed, 1))
        ranking.to_csv(out_path(output_dir, "ranking.csv"))
        save_net(ae.net, out_path(output_dir, "autoencoder.net"))
        ae.history.to_csv(out_path(output_dir, "autoencoder_history.csv"))
        write_json(out_path(output_dir, "basis.json"),
                   {"k": sel.k, "top": sel.top, "bottom": sel.bottom, "excluded": ranking.excluded})

        stage = "equal_weight_tracker"
        ew = _stage(stage, lambda: [equal_weight_tracker(panel, sel.top, index, span, label)
                                    for label, span in zip(labels, spans)])

        stage = "train_dfp"
        tracker = _stage(stage, train_dfp, train, sel, index, dfp_spec_for(cfg, cfg.k), cfg.dfp.train,
                         make_rng(seed, 2))
        save_net(tracker.net, out_path(output_dir, "dfp.net"))
        tracker.history.to_csv(out_path(output_dir, "dfp_history.csv"))

        stage = "evaluate_tracker"
        dfp = _stage(stage, evaluate_tracker, tracker, panel, index, spans, labels, threads)

        stage = "write_reports"
        for r in ew:
            r.paths_to_csv(out_path(output_dir, f"paths_equal_weight_{r.label}.csv"))
        for r in dfp:
            r.paths_to_csv(out_path(output_dir, f"paths_dfp_{r.label}.csv"))
        payload = report_payload(sel, ew, dfp)
        write_json(out_path(output_dir, "report.json"), payload)
    except Exception as exc:
        err = exc if isinstance(exc, StageError) else StageError(stage, exc)
        with open(marker, "w", newline="\n") as fh:
            fh.write(f"stage: {err.stage}\nerror: {err.cause}\n")
        raise err from exc
    return payload


def report_payload(sel, ew_reports, dfp_reports):
    """Deterministic report body; run-specific details stay in the manifest."""
    ew = {r.label: r.metrics() for r in ew_reports}
    dfp = {r.label: r.metrics() for r in dfp_reports}
    ratios = {}
    if "train" in ew:
        for label in ew:
            if label == "train":
                continue
            ratios[label] = {
                "equal_weight": _ratio(ew[label]["tracking_error"], ew["train"]["tracking_error"]),
                "dfp": _ratio(dfp[label]["tracking_error"], dfp["train"]["tracking_error"]),
            }
    return {
        "basis": {"k": sel.k, "top": sel.top, "bottom": sel.bottom},
        "equal_weight": ew,
        "dfp": dfp,
        "tracking_error_ratio": ratios,
    }


def _ratio(a, b):
    return a / b if b > 0 else None


def describe(payload, out=None):
    out = out or sys.stdout
    for label, m in payload["equal_weight"].items():
        d = payload["dfp"][label]
        flags = f"  flags={','.join(d['flags'])}" if d["flags"] else ""
        print(f"{label:>12s}  TE equal-weight {m['tracking_error']:.6f}  TE dfp {d['tracking_error']:.6f}{flags}",
              file=out)
