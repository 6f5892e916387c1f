"""Factor-model market generator standing in for a real index panel.

Returns follow ``r[t, j] = mu + sum_f beta[j, f] F[t, f] + eps[t, j]`` with
Gaussian factors and noise. A leading block of assets is "communal" (loading
near one on the first factor); the trailing ``individualistic_fraction`` of
assets has loadings scaled down by ``individualistic_loading``. An optional
regime shift at ``shift_period`` rescales volatilities and redraws loadings
for the remaining periods. ``noise_dispersion`` > 0 gives each asset its own
noise scale, ``noise_scale * exp(noise_dispersion * z_j)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .panel import IndexSeries, ReturnsPanel


@dataclass(frozen=True)
class SyntheticMarketSpec:
    n_assets: int = 50
    n_periods: int = 500
    n_factors: int = 1
    factor_vols: tuple = (0.01,)
    noise_scale: float = 0.005
    individualistic_fraction: float = 0.5
    individualistic_loading: float = 0.1
    loading_dispersion: float = 0.2
    drift: float = 0.0002
    index_weighting: str = "cap"
    cap_dispersion: float = 1.0
    start_date: str = "2014-01-01"
    shift_period: int = None
    shift_factor_vol: float = 1.0
    shift_noise: float = 1.0
    shift_loading_redraw: float = 0.0
    noise_dispersion: float = 0.0

    def __post_init__(self):
        if not 1 <= self.n_factors < self.n_assets:
            raise ValueError("need 1 <= n_factors < n_assets")
        if self.n_periods < 2:
            raise ValueError("need at least 2 periods")
        vols = tuple(float(v) for v in np.broadcast_to(self.factor_vols, (self.n_factors,)))
        object.__setattr__(self, "factor_vols", vols)
        if any(v <= 0 for v in vols):
            raise ValueError("factor volatilities must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.noise_dispersion < 0:
            raise ValueError("noise_dispersion must be >= 0")
        if not 0.0 <= self.individualistic_fraction <= 1.0:
            raise ValueError("individualistic_fraction must lie in [0, 1]")
        if self.index_weighting not in ("equal", "cap"):
            raise ValueError("index_weighting must be 'equal' or 'cap'")
        if self.shift_period is not None and not 0 < self.shift_period < self.n_periods:
            raise ValueError("shift_period must fall inside the sample")

    @property
    def n_individualistic(self):
        return int(round(self.individualistic_fraction * self.n_assets))


@dataclass
class SyntheticMarket:
    panel: ReturnsPanel
    index: IndexSeries
    loadings: np.ndarray  # (N, f) before any shift
    communal: np.ndarray = field(default=None)  # bool mask of communal assets
    index_weights: np.ndarray = None
    shifted_loadings: np.ndarray = None


def _business_days(start, n):
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")


def synth_market(spec, rng):
    N, T, K = spec.n_assets, spec.n_periods, spec.n_factors
    n_ind = spec.n_individualistic
    communal = np.ones(N, dtype=bool)
    if n_ind:
        communal[N - n_ind:] = False

    B = np.empty((N, K))
    B[:, 0] = 1.0 + spec.loading_dispersion * rng.standard_normal(N)
    if K > 1:
        B[:, 1:] = 0.5 * rng.standard_normal((N, K - 1))
    B[~communal] *= spec.individualistic_loading

    vols = np.asarray(spec.factor_vols)
    F = rng.standard_normal((T, K)) * vols
    E = rng.standard_normal((T, N)) * spec.noise_scale
    R = spec.drift + F @ B.T + E

    B2 = None
    if spec.shift_period is not None:
        s = spec.shift_period
        B2 = B + spec.shift_loading_redraw * rng.standard_normal((N, K)) * np.where(
            communal, 1.0, spec.individualistic_loading)[:, None]
        R[s:] = spec.drift + spec.shift_factor_vol * F[s:] @ B2.T + spec.shift_noise * E[s:]

    if spec.index_weighting == "equal":
        w = np.full(N, 1.0 / N)
    else:
        caps = np.exp(spec.cap_dispersion * rng.standard_normal(N))
        w = caps / caps.sum()

    if spec.noise_dispersion > 0:
        # drawn last so markets without dispersion keep their seeded values
        extra = np.exp(spec.noise_dispersion * rng.standard_normal(N)) - 1.0
        if spec.shift_period is not None:
            E[spec.shift_period:] *= spec.shift_noise
        R = R + E * extra

    dates = _business_days(spec.start_date, T)
    assets = [f"A{j:03d}" for j in range(N)]
    panel = ReturnsPanel(dates, assets, R)
    index = IndexSeries(dates, R @ w, "index")
    return SyntheticMarket(panel, index, B, communal, w, B2)
