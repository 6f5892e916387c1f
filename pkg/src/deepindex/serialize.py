"""Versioned plain-text model files.

Layout: a header line, ``key value...`` lines for the architecture, then one
block per parameter array: ``name rows cols`` followed by ``rows`` lines of
decimal values printed with 17 significant digits, which round-trips IEEE
doubles exactly.
"""

import numpy as np

from .lstm import LstmCell, Readout
from .network import DeepNet, NetworkSpec

NET_HEADER = "# deepindex-net v1"
LSTM_HEADER = "# deepindex-lstm v1"


class FormatError(ValueError):
    pass


def _fmt(v):
    return format(float(v), ".17g")


def _write_array(lines, name, a):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
    for row in a:
        lines.append(" ".join(_fmt(v) for v in row))


class _Reader:
    def __init__(self, text, header):
        self.lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
        if not self.lines or self.lines[0].strip() != header:
            raise FormatError(f"expected header {header!r}")
        self.pos = 1

    def field(self, key):
        parts = self.lines[self.pos].split()
        if not parts or parts[0] != key:
            raise FormatError(f"line {self.pos + 1}: expected {key!r}")
        self.pos += 1
        return parts[1:]

    def array(self, name):
        rows, cols = (int(v) for v in self.field(name))
        out = np.empty((rows, cols))
        for r in range(rows):
            vals = self.lines[self.pos].split()
            if len(vals) != cols:
                raise FormatError(f"line {self.pos + 1}: expected {cols} values")
            out[r] = [float(v) for v in vals]
            self.pos += 1
        return out


def dumps_net(net):
    s = net.spec
    lines = [
        NET_HEADER,
        f"input_dim {s.input_dim}",
        "hidden_sizes " + " ".join(str(n) for n in s.hidden_sizes),
        "activations " + " ".join(s.activations),
        f"output_dim {s.output_dim}",
    ]
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        _write_array(lines, f"W{l}", w)
        _write_array(lines, f"b{l}", b[None, :])
    return "\n".join(lines) + "\n"


def loads_net(text):
    rd = _Reader(text, NET_HEADER)
    input_dim = int(rd.field("input_dim")[0])
    hidden = tuple(int(v) for v in rd.field("hidden_sizes"))
    acts = tuple(rd.field("activations"))
    output_dim = int(rd.field("output_dim")[0])
    spec = NetworkSpec(input_dim, hidden, acts, output_dim)
    ws, bs = [], []
    for l in range(spec.depth + 1):
        ws.append(rd.array(f"W{l}"))
        bs.append(rd.array(f"b{l}")[0])
    return DeepNet(spec, ws, bs)


def dumps_lstm(cell, readout):
    lines = [
        LSTM_HEADER,
        f"input_size {cell.input_size}",
        f"hidden_size {cell.hidden_size}",
        f"output_size {readout.weight.shape[0]}",
    ]
    for name in ("w_f", "w_i", "w_c", "w_o"):
        _write_array(lines, name, getattr(cell, name))
    for name in ("b_f", "b_i", "b_c", "b_o"):
        _write_array(lines, name, getattr(cell, name)[None, :])
    _write_array(lines, "readout_w", readout.weight)
    _write_array(lines, "readout_b", readout.bias[None, :])
    return "\n".join(lines) + "\n"


def loads_lstm(text):
    rd = _Reader(text, LSTM_HEADER)
    sizes = tuple(int(rd.field(k)[0]) for k in ("input_size", "hidden_size", "output_size"))
    ws = [rd.array(n) for n in ("w_f", "w_i", "w_c", "w_o")]
    bs = [rd.array(n)[0] for n in ("b_f", "b_i", "b_c", "b_o")]
    readout = Readout(rd.array("readout_w"), rd.array("readout_b")[0])
    cell = LstmCell(*ws, *bs)
    if (cell.input_size, cell.hidden_size, readout.weight.shape[0]) != sizes:
        raise FormatError(f"arrays disagree with declared sizes {sizes}")
    return cell, readout


def save_net(net, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_net(net))


def load_net(path):
    with open(path) as fh:
        return loads_net(fh.read())


def save_lstm(cell, readout, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_lstm(cell, readout))


def load_lstm(path):
    with open(path) as fh:
        return loads_lstm(fh.read())
