"""Return panels with their index series, read from CSV."""

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError

log = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none", "n/a"}


class IngestError(ValueError):
    pass


def _dates(values):
    return np.array([np.datetime64(str(d), "D") for d in values], dtype="datetime64[D]")


@dataclass
class ReturnsPanel:
    """Simple returns: rows are dates, columns are assets."""

    dates: np.ndarray
    assets: list
    values: np.ndarray

    def __post_init__(self):
        self.dates = _dates(self.dates)
        self.assets = [str(a) for a in self.assets]
        self.values = np.array(self.values, dtype=np.float64)
        T, N = self.values.shape
        if len(self.dates) != T or len(self.assets) != N:
            raise ShapeError(f"values {self.values.shape} vs {len(self.dates)} dates, {N} assets")
        if len(set(self.assets)) != N:
            raise ValueError("asset ids must be unique")
        if T > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel contains non-finite returns")
        if np.any(self.values <= -1.0):
            raise ValueError("returns must exceed -1")

    @property
    def shape(self):
        return self.values.shape

    def columns(self, assets):
        index = {a: j for j, a in enumerate(self.assets)}
        missing = [a for a in assets if a not in index]
        if missing:
            raise KeyError(f"assets not in panel: {', '.join(missing)}")
        return [index[a] for a in assets]

    def select(self, assets):
        cols = self.columns(assets)
        return ReturnsPanel(self.dates, list(assets), self.values[:, cols])

    def window_rows(self, start=None, end=None):
        """Row indices with ``start <= date <= end`` (either bound optional)."""
        mask = np.ones(len(self.dates), dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(str(start), "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(str(end), "D")
        return np.flatnonzero(mask)

    def window(self, start=None, end=None):
        rows = self.window_rows(start, end)
        if rows.size == 0:
            raise ValueError(f"window {start}..{end} contains no dates")
        return ReturnsPanel(self.dates[rows], self.assets, self.values[rows])

    def to_csv(self, path):
        write_csv(path, self.dates, self.assets, self.values)


@dataclass
class IndexSeries:
    dates: np.ndarray
    returns: np.ndarray
    name: str = "index"

    def __post_init__(self):
        self.dates = _dates(self.dates)
        self.returns = np.array(self.returns, dtype=np.float64).reshape(-1)
        if len(self.dates) != len(self.returns):
            raise ShapeError("index dates and returns differ in length")

    @classmethod
    def weighted(cls, panel, weights, name="index"):
        w = np.asarray(weights, dtype=np.float64)
        return cls(panel.dates, panel.values @ w, name)

    def aligned(self, dates):
        """Returns on exactly ``dates``; every date must be present."""
        pos = {d: i for i, d in enumerate(self.dates.tolist())}
        try:
            rows = [pos[d] for d in _dates(dates).tolist()]
        except KeyError as exc:
            raise ValueError(f"index has no value for {exc.args[0]}") from None
        return self.returns[rows]

    def levels(self, base=1.0):
        return base * np.cumprod(1.0 + self.returns)

    def to_csv(self, path):
        write_csv(path, self.dates, [self.name], self.returns[:, None])


def _fmt(v):
    return format(float(v), ".17g")


def write_csv(path, dates, columns, values, date_col="date"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([date_col, *columns])
        for d, row in zip(dates, values):
            w.writerow([str(d), *(_fmt(v) for v in row)])


def _parse_date(text, row):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise IngestError(f"row {row}: cannot parse date {text!r}") from None


def read_table(path, date_col="date"):
    """Parsed table: dates plus a named float matrix, NaN where a cell is missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if date_col not in header:
            raise IngestError(f"{path}: no {date_col!r} column in header")
        dcol = header.index(date_col)
        names = [h for i, h in enumerate(header) if i != dcol]
        dates, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise IngestError(f"row {lineno}: expected {len(header)} cells, got {len(rec)}")
            dates.append(_parse_date(rec[dcol], lineno))
            vals = []
            for i, cell in enumerate(rec):
                if i == dcol:
                    continue
                c = cell.strip()
                if c.lower() in MISSING:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(c)
                except ValueError:
                    raise IngestError(
                        f"row {lineno}, column {header[i]!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestError(f"row {lineno}, column {header[i]!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return dates, names, values


def _check_dates(dates):
    seen = set()
    for prev, cur in zip(dates, dates[1:]):
        if cur == prev or cur in seen:
            raise IngestError(f"duplicate date {cur.isoformat()}")
        if cur < prev:
            raise IngestError(f"dates not increasing at {cur.isoformat()}")
        seen.add(prev)


def ingest_csv(path, date_col="date", kind="price"):
    """Read a wide CSV (one date column, one column per asset) into returns.

    ``kind="price"`` converts levels to simple returns ``p_t / p_{t-1} - 1``.
    Rows with any missing cell are dropped and the count is logged.
    """
    if kind not in ("price", "return"):
        raise ValueError("kind must be 'price' or 'return'")
    dates, names, values = read_table(path, date_col)
    _check_dates(dates)
    keep = ~np.isnan(values).any(axis=1)
    dropped = int(np.sum(~keep))
    if dropped:
        log.warning("%s: dropped %d row(s) with missing cells", path, dropped)
    dates = [d for d, k in zip(dates, keep) if k]
    values = values[keep]
    if kind == "price":
        if np.any(values <= 0):
            r, c = np.argwhere(values <= 0)[0]
            raise IngestError(f"non-positive price on {dates[r].isoformat()} for {names[c]!r}")
        if len(dates) < 2:
            raise IngestError(f"{path}: fewer than 2 usable price rows")
        values = values[1:] / values[:-1] - 1.0
        dates = dates[1:]
    if len(dates) < 1 or (kind == "return" and len(dates) < 2):
        raise IngestError(f"{path}: fewer than 2 usable rows")
    return ReturnsPanel(np.array(dates, dtype="datetime64[D]"), names, values)


def ingest_index_csv(path, date_col="date", kind="return", column=None):
    panel = ingest_csv(path, date_col, kind)
    col = 0 if column is None else panel.assets.index(column)
    return IndexSeries(panel.dates, panel.values[:, col], panel.assets[col])
