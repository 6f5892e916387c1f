"""Time the numba and numpy versions of each hot kernel on the same inputs.

Both versions live side by side in deepindex._kernels, so one process can
time them directly; DEEPINDEX_DISABLE_NUMBA only changes which one the
library dispatches to. ``--end-to-end`` also times lag-recall LSTM training
in two subprocesses, one per backend.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeat 20 --end-to-end --json out.json
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from deepindex import _accel, _kernels
from deepindex.numerics import make_rng


def best_time(fn, args, repeat):
    fn(*args)  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases(batch, length, hidden):
    rng = make_rng(0)
    I, O = 2, 1
    X = rng.standard_normal((batch, length, I))
    W = 0.5 * rng.standard_normal((4 * hidden, hidden + I))
    b = 0.1 * rng.standard_normal(4 * hidden)
    Wy = 0.5 * rng.standard_normal((O, hidden))
    by = np.zeros(O)
    Y, Z, C, G, tC = _kernels.lstm_forward_np(X, W, b, Wy, by)
    dY = rng.standard_normal(Y.shape)

    Wxz = 0.5 * rng.standard_normal((hidden, I))
    Wzz = 0.5 * rng.standard_normal((hidden, hidden))
    bx = np.zeros(hidden)
    Why = 0.5 * rng.standard_normal((O, hidden))
    bz = np.zeros(O)
    tanh = _kernels.ACT_CODES["tanh"]
    rY, rZ, rP, rQ = _kernels.rnn_forward_np(X, Wxz, Wzz, bx, Why, bz, tanh, tanh)

    Xd = rng.standard_normal((40, 4))
    yd = rng.standard_normal(40)
    masks = (rng.random((4096, 40, 4)) < 0.5).astype(np.float64)
    return [
        ("lstm_forward", (X, W, b, Wy, by)),
        ("lstm_backward", (X, W, Wy, Z, C, G, tC, dY)),
        ("rnn_forward", (X, Wxz, Wzz, bx, Why, bz, tanh, tanh)),
        ("rnn_backward", (X, Wxz, Wzz, Why, rY, rZ, rP, rQ, dY, tanh, tanh)),
        ("dropout_moments", (Xd, yd, masks)),
    ]


E2E = """
import time
from deepindex import backend
from deepindex.lstm import init_lstm, lag_recall_task, lstm_train
from deepindex.numerics import make_rng
from deepindex.training import TrainConfig
data = lag_recall_task(make_rng(0, 1), 128, 30, 8)
cell, readout = init_lstm(1, 6, 1, make_rng(0, 3))
cfg = TrainConfig(penalty="none", learning_rate=0.2, batch_size=16, epochs=1)
lstm_train(cell, readout, data, cfg, make_rng(0, 4))  # compile / warm caches
t = time.perf_counter()
lstm_train(cell, readout, data, cfg.replace(epochs=20), make_rng(0, 4))
print(backend(), time.perf_counter() - t)
"""


def end_to_end():
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, DEEPINDEX_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        name, secs = res.stdout.split()
        out[name] = float(secs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=30)
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--end-to-end", action="store_true", help="also time LSTM training per backend")
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)

    if not _accel.HAS_NUMBA:
        print("numba is not installed; only the numpy path can be timed")
    rows = []
    print(f"{'kernel':<16s} {'numpy ms':>10s} {'numba ms':>10s} {'speed-up':>9s}")
    for name, kargs in cases(args.batch, args.length, args.hidden):
        t_np = best_time(getattr(_kernels, name + "_np"), kargs, args.repeat)
        t_nb = best_time(getattr(_kernels, name + "_nb"), kargs, args.repeat) if _accel.HAS_NUMBA else None
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb})
        nb = f"{1e3 * t_nb:10.3f} {t_np / t_nb:8.1f}x" if t_nb else f"{'-':>10s} {'-':>9s}"
        print(f"{name:<16s} {1e3 * t_np:10.3f} {nb}")
    result = {"shape": {"batch": args.batch, "length": args.length, "hidden": args.hidden}, "kernels": rows}
    if args.end_to_end:
        result["lstm_train_20_epochs_s"] = e2e = end_to_end()
        print("lstm training, 20 epochs: " + ", ".join(f"{k} {v:.2f}s" for k, v in sorted(e2e.items())))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
