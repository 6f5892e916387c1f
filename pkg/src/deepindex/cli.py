"""deepindex command line.

Every command that draws random numbers requires ``--seed``. Config values
come from ``--config`` (JSON); flags given on the command line win.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, load_config, parse_config
from .gradcheck import gradient_suite
from .indexing import DfpTracker, equal_weight_tracker, evaluate_tracker, select_basis, train_dfp
from .numerics import make_rng
from .panel import ingest_csv, ingest_index_csv, write_csv
from .pipeline import (
    StageError,
    ae_spec_for,
    check_k,
    describe,
    dfp_spec_for,
    eval_windows,
    load_market,
    out_path,
    run_pipeline,
    train_panel,
    write_json,
)
from .serialize import load_net, save_lstm, save_net
from .synth import SyntheticMarketSpec, synth_market

log = logging.getLogger("deepindex")

STOCHASTIC = {"synth", "autoencode", "rank", "track", "train-dfp", "run", "gradcheck", "lstm-vol"}


def _config(args):
    overrides = {"seed": args.seed, "output_dir": args.output_dir, "k": getattr(args, "k", None)}
    if args.config:
        return load_config(args.config, overrides)
    raw = {k: v for k, v in overrides.items() if v is not None}
    raw.setdefault("synthetic", {})
    return parse_config(raw)


def _outdir(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def cmd_synth(args):
    if args.config:
        cfg = _config(args)
        spec = cfg.synthetic
        if spec is None:
            raise ConfigError("config has no 'synthetic' section")
        outdir = _outdir(cfg)
    else:
        spec = SyntheticMarketSpec(n_assets=args.n_assets, n_periods=args.n_periods, start_date=args.start_date)
        outdir = args.output_dir or "out"
        os.makedirs(outdir, exist_ok=True)
    market = synth_market(spec, make_rng(args.seed, 0))
    market.panel.to_csv(out_path(outdir, "returns.csv"))
    market.index.to_csv(out_path(outdir, "index.csv"))
    with open(out_path(outdir, "loadings.csv"), "w", newline="") as fh:
        fh.write("asset,communal," + ",".join(f"beta{f}" for f in range(market.loadings.shape[1])) + "\n")
        for a, c, row in zip(market.panel.assets, market.communal, market.loadings):
            fh.write(f"{a},{int(c)}," + ",".join(format(v, ".17g") for v in row) + "\n")
    print(f"wrote {market.panel.values.shape[1]} assets x {market.panel.values.shape[0]} periods to {outdir}")
    return 0


def cmd_ingest_check(args):
    panel = ingest_csv(args.path, args.date_column, args.kind)
    v = panel.values
    print(f"rows {v.shape[0]}  assets {v.shape[1]}  {panel.dates[0]} .. {panel.dates[-1]}")
    const = [a for a, s in zip(panel.assets, v.std(axis=0)) if s == 0]
    print(f"mean return {v.mean():.6g}  std {v.std():.6g}  constant columns {len(const)}")
    if args.index:
        index = ingest_index_csv(args.index, args.date_column, args.index_kind)
        index.aligned(panel.dates)
        print(f"index {index.name!r} covers all {len(panel.dates)} panel dates")
    return 0


def _basis(cfg, args):
    panel, index, _ = load_market(cfg, args.seed)
    check_k(cfg, panel)
    train = train_panel(cfg, panel)
    sel, ranking, ae = select_basis(train, ae_spec_for(cfg, train), cfg.k, cfg.autoencoder.train,
                                    make_rng(args.seed, 1))
    return panel, index, train, sel, ranking, ae


def cmd_autoencode(args):
    from .autoencoder import reconstruction_error, train_autoencoder

    cfg = _config(args)
    outdir = _outdir(cfg)
    panel, _, _ = load_market(cfg, args.seed)
    train = train_panel(cfg, panel)
    ae = train_autoencoder(ae_spec_for(cfg, train), train, cfg.autoencoder.train, make_rng(args.seed, 1))
    save_net(ae.net, out_path(outdir, "autoencoder.net"))
    ae.history.to_csv(out_path(outdir, "autoencoder_history.csv"))
    write_csv(out_path(outdir, "reconstructed.csv"), train.dates, train.assets, ae.reconstruct(train.values))
    print(f"reconstruction error (standardised, per row) {reconstruction_error(ae, train):.6g}")
    return 0


def cmd_rank(args):
    cfg = _config(args)
    outdir = _outdir(cfg)
    _, _, _, sel, ranking, _ = _basis(cfg, args)
    ranking.to_csv(out_path(outdir, "ranking.csv"))
    write_json(out_path(outdir, "basis.json"), {"k": sel.k, "top": sel.top, "bottom": sel.bottom,
                                                "excluded": ranking.excluded})
    for rank, asset, dist in ranking.rows()[: args.show]:
        print(f"{rank:4d}  {asset}  {dist:.6f}")
    return 0


def cmd_track(args):
    cfg = _config(args)
    outdir = _outdir(cfg)
    panel, index, _, sel, _, _ = _basis(cfg, args)
    reports = [equal_weight_tracker(panel, sel.top, index, span, label) for label, span in eval_windows(cfg, panel)]
    for r in reports:
        r.paths_to_csv(out_path(outdir, f"paths_equal_weight_{r.label}.csv"))
        print(f"{r.label:>12s}  TE {r.tracking_error:.6f}  terminal gap {r.terminal_gap:+.6f}")
    write_json(out_path(outdir, "equal_weight_report.json"), {"reports": [r.metrics() for r in reports]})
    return 0


def cmd_train_dfp(args):
    cfg = _config(args)
    outdir = _outdir(cfg)
    _, index, train, sel, _, _ = _basis(cfg, args)
    tracker = train_dfp(train, sel, index, dfp_spec_for(cfg, cfg.k), cfg.dfp.train, make_rng(args.seed, 2))
    save_net(tracker.net, out_path(outdir, "dfp.net"))
    tracker.history.to_csv(out_path(outdir, "dfp_history.csv"))
    write_json(out_path(outdir, "basis.json"), {"k": sel.k, "top": sel.top, "bottom": sel.bottom})
    print(f"final objective {tracker.history.objective[-1]:.6g}; model in {outdir}/dfp.net")
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    outdir = _outdir(cfg)
    model_dir = args.model_dir or outdir
    with open(os.path.join(model_dir, "basis.json")) as fh:
        basis = json.load(fh)
    tracker = DfpTracker(load_net(os.path.join(model_dir, "dfp.net")), basis["top"] + basis["bottom"])
    if cfg.synthetic is not None and cfg.seed is None:
        raise ConfigError("evaluate on synthetic data needs --seed to regenerate the market")
    panel, index, _ = load_market(cfg, cfg.seed)
    windows = eval_windows(cfg, panel)
    reports = evaluate_tracker(tracker, panel, index, [w[1] for w in windows], [w[0] for w in windows],
                               args.threads)
    for r in reports:
        r.paths_to_csv(out_path(outdir, f"paths_dfp_{r.label}.csv"))
        flags = f"  flags={','.join(r.flags)}" if r.flags else ""
        print(f"{r.label:>12s}  TE {r.tracking_error:.6f}  terminal gap {r.terminal_gap:+.6f}{flags}")
    write_json(out_path(outdir, "dfp_report.json"), {"reports": [r.metrics() for r in reports]})
    return 0


def cmd_run(args):
    cfg = _config(args)
    try:
        payload = run_pipeline(cfg, args.seed, args.threads)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    describe(payload)
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_gradcheck(args):
    cases = gradient_suite(args.n_configs, args.seed, args.max_depth, args.max_width, args.max_len)
    worst = max(cases, key=lambda c: c.rel_error)
    bad = [c for c in cases if not c.rel_error < args.tol]
    for c in bad:
        print(f"FAIL {c.rel_error:.3e}  {c.description}")
    print(f"{len(cases)} cases, worst relative error {worst.rel_error:.3e} ({worst.description})")
    return 1 if bad else 0


def cmd_lstm_vol(args):
    """LSTM one-step-ahead forecast of squared returns in a two-state volatility regime."""
    from .lstm import init_lstm, lstm_forward, lstm_train, regime_volatility_task
    from .training import TrainConfig

    outdir = args.output_dir or "out"
    os.makedirs(outdir, exist_ok=True)
    train = regime_volatility_task(make_rng(args.seed, 0), args.sequences, args.length)
    test = regime_volatility_task(make_rng(args.seed, 1), args.sequences, args.length)
    cell, readout = init_lstm(2, args.hidden, 1, make_rng(args.seed, 2))
    cfg = TrainConfig(penalty="none", learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs)
    cell, readout, hist = lstm_train(cell, readout, train, cfg, make_rng(args.seed, 3))
    pred = lstm_forward(cell, test.inputs, readout)
    target = test.targets[..., 0]
    mse = float(np.mean((pred[..., 0] - target) ** 2))
    const = float(np.mean((train.targets.mean() - target) ** 2))
    persist = float(np.mean((test.inputs[..., 1] - target) ** 2))
    save_lstm(cell, readout, out_path(outdir, "lstm_vol.lstm"))
    hist.to_csv(out_path(outdir, "lstm_vol_history.csv"))
    with open(out_path(outdir, "lstm_vol_forecast.csv"), "w", newline="") as fh:
        fh.write("sequence,step,return,target,forecast\n")
        for b in range(target.shape[0]):
            for t in range(target.shape[1]):
                fh.write(f"{b},{t},{test.inputs[b, t, 0]:.17g},{target[b, t]:.17g},{pred[b, t, 0]:.17g}\n")
    write_json(out_path(outdir, "lstm_vol_report.json"),
               {"test_mse": mse, "constant_mse": const, "persistence_mse": persist})
    print(f"test MSE lstm {mse:.4f}  constant {const:.4f}  persistence {persist:.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="deepindex", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, k=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="RNG seed (required for stochastic commands)")
        sp.add_argument("--output-dir", help="directory for all artifacts")
        sp.add_argument("--threads", type=int, default=1)
        if k:
            sp.add_argument("--k", type=int, help="basis size per side")

    sp = sub.add_parser("synth", help="generate a synthetic factor market")
    common(sp)
    sp.add_argument("--n-assets", type=int, default=50)
    sp.add_argument("--n-periods", type=int, default=500)
    sp.add_argument("--start-date", default="2014-01-01")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest-check", help="validate a returns/prices CSV")
    sp.add_argument("path")
    sp.add_argument("--kind", choices=("price", "return"), default="price")
    sp.add_argument("--date-column", default="date")
    sp.add_argument("--index", help="optional index CSV to check for date coverage")
    sp.add_argument("--index-kind", choices=("price", "return"), default="return")
    sp.set_defaults(func=cmd_ingest_check, seed=None)

    for name, fn, hlp in (
        ("autoencode", cmd_autoencode, "train the bottleneck auto-encoder"),
        ("rank", cmd_rank, "rank assets by communal information"),
        ("track", cmd_track, "equal-weight tracker on the communal basis"),
        ("train-dfp", cmd_train_dfp, "fit the deep feature policy"),
        ("evaluate", cmd_evaluate, "evaluate a saved DFP over the configured windows"),
        ("run", cmd_run, "full pipeline"),
    ):
        sp = sub.add_parser(name, help=hlp)
        common(sp, k=True)
        if name == "rank":
            sp.add_argument("--show", type=int, default=10)
        if name == "evaluate":
            sp.add_argument("--model-dir", help="directory holding dfp.net and basis.json")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("lstm-vol", help="LSTM volatility forecast on a synthetic regime-switching series")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output-dir")
    sp.add_argument("--hidden", type=int, default=6)
    sp.add_argument("--sequences", type=int, default=64)
    sp.add_argument("--length", type=int, default=60)
    sp.add_argument("--epochs", type=int, default=60)
    sp.add_argument("--lr", type=float, default=0.02)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.set_defaults(func=cmd_lstm_vol)

    sp = sub.add_parser("gradcheck", help="backprop/BPTT against finite differences")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-configs", type=int, default=100)
    sp.add_argument("--max-depth", type=int, default=3)
    sp.add_argument("--max-width", type=int, default=8)
    sp.add_argument("--max-len", type=int, default=5)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in STOCHASTIC and args.seed is None:
        parser.error(f"{args.command}: --seed is required")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
