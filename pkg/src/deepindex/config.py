"""Run configuration: JSON in, validated dataclasses out.

Unknown keys are errors at every level so that a typo never silently falls
back to a default.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .synth import SyntheticMarketSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class CsvSource:
    path: str
    kind: str = "price"
    date_column: str = "date"
    index_path: str = None
    index_kind: str = "return"
    index_column: str = None


@dataclass(frozen=True)
class AutoencoderConfig:
    bottleneck: int = 4
    activation: str = "sigmoid"
    sparsity_rho: float = 0.01
    sparsity_beta: float = 3.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        penalty="none", learning_rate=0.05, batch_size=32, epochs=200))


@dataclass(frozen=True)
class DfpConfig:
    hidden_sizes: tuple = (4, 2)
    activations: tuple = ("tanh", "tanh")
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        penalty="ridge", lam=0.0, learning_rate=0.05, batch_size=32, epochs=300))


@dataclass(frozen=True)
class Window:
    label: str
    start: str
    end: str


@dataclass(frozen=True)
class Config:
    synthetic: SyntheticMarketSpec = None
    csv: CsvSource = None
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    dfp: DfpConfig = field(default_factory=DfpConfig)
    k: int = 10
    train_window: Window = None
    windows: tuple = ()
    output_dir: str = "out"
    seed: int = None

    def to_dict(self):
        return _jsonable(dataclasses.asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


TOP_KEYS = {f.name for f in dataclasses.fields(Config)}


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    kw = {}
    if "synthetic" in raw and "csv" in raw:
        raise ConfigError("give either 'synthetic' or 'csv' as the data source, not both")
    if "synthetic" in raw:
        syn = dict(raw["synthetic"])
        if "factor_vols" in syn:
            syn["factor_vols"] = tuple(syn["factor_vols"]) if isinstance(syn["factor_vols"], list) else syn["factor_vols"]
        kw["synthetic"] = _build(SyntheticMarketSpec, syn, "synthetic")
    if "csv" in raw:
        kw["csv"] = _build(CsvSource, raw["csv"], "csv")
    if "autoencoder" in raw:
        ae = dict(raw["autoencoder"])
        if "train" in ae:
            ae["train"] = _build(TrainConfig, ae["train"], "autoencoder.train")
        kw["autoencoder"] = _build(AutoencoderConfig, ae, "autoencoder")
    if "dfp" in raw:
        d = dict(raw["dfp"])
        if "train" in d:
            d["train"] = _build(TrainConfig, d["train"], "dfp.train")
        for key in ("hidden_sizes", "activations"):
            if key in d:
                d[key] = tuple(d[key])
        kw["dfp"] = _build(DfpConfig, d, "dfp")
    if "train_window" in raw:
        kw["train_window"] = _build(Window, raw["train_window"], "train_window")
    if "windows" in raw:
        if not isinstance(raw["windows"], list):
            raise ConfigError("windows: expected a list")
        kw["windows"] = tuple(_build(Window, w, f"windows[{i}]") for i, w in enumerate(raw["windows"]))
    for key in ("k", "output_dir", "seed"):
        if key in raw:
            kw[key] = raw[key]
    cfg = Config(**kw)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.synthetic is None and cfg.csv is None:
        raise ConfigError("no data source: give 'synthetic' or 'csv'")
    if not isinstance(cfg.k, int) or cfg.k < 1:
        raise ConfigError("k must be a positive integer")
    if cfg.synthetic is not None and 2 * cfg.k > cfg.synthetic.n_assets:
        raise ConfigError(f"k={cfg.k} exceeds half of n_assets={cfg.synthetic.n_assets}")
    if len(cfg.dfp.hidden_sizes) != len(cfg.dfp.activations):
        raise ConfigError("dfp: need one activation per hidden layer")
    labels = [w.label for w in cfg.windows]
    if len(set(labels)) != len(labels):
        raise ConfigError("window labels must be unique")
    for w in cfg.windows + ((cfg.train_window,) if cfg.train_window else ()):
        if str(w.start) > str(w.end):
            raise ConfigError(f"window {w.label!r} starts after it ends")


def load_config(path, overrides=None):
    with open(path) as fh:
        raw = json.load(fh)
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return parse_config(raw)
