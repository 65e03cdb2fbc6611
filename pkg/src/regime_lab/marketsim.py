"""Synthetic multi-stock market with a hidden two-regime anomaly switch.

A two-state Markov chain (bull=0, bear=1) drives index drift and volatility.
Each regime injects one cross-sectional anomaly into stock drifts: in the
momentum regime a stock's expected forward return increases with its
trailing 12-month return (measured up to one month back), in the reversal
regime it decreases with its trailing one-month return. The implied-vol
series is trailing realized index vol marked up by a premium, so it is
higher in the bear regime and carries a positive variance risk premium by
construction. Everything is deterministic per seed.

Optional log-vol AR(1) modulation (`vol_ar_std` > 0) adds smooth nonlinear
volatility dynamics on top of the regime levels, which gives the
volatility-prediction experiment something beyond a two-level target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .panel import PricePanel

logger = logging.getLogger(__name__)

MOMENTUM_WINDOW = 252   # trailing year for the momentum signal
SKIP_WINDOW = 42        # ~2 months between the momentum window and today
REVERSAL_WINDOW = 21    # trailing month for the reversal signal
VIX_WINDOW = 21         # trailing window for the implied-vol proxy
BURN_IN = MOMENTUM_WINDOW + SKIP_WINDOW + VIX_WINDOW + 6

BULL, BEAR = 0, 1
REGIME_NAMES = {BULL: "bull", BEAR: "bear"}


@dataclass
class RegimeParams:
    """Per-regime dynamics plus the hidden-state transition matrix."""

    bull_drift: float = 0.0004
    bull_vol: float = 0.008
    bull_mode: str = "momentum"
    bear_drift: float = -0.0004
    bear_vol: float = 0.020
    bear_mode: str = "reversal"
    anomaly_strength: float = 0.5
    anomaly_scale: float = 0.006       # daily drift per unit z at strength 1
    transition: tuple[tuple[float, float], tuple[float, float]] = (
        (0.992, 0.008), (0.012, 0.988))  # mean spells ~6 and ~4 months
    vol_premium: float = 0.2           # implied-vol markup over realized
    idio_vol: float = 0.02
    beta_low: float = 0.8
    beta_high: float = 1.2
    vol_ar_coef: float = 0.0
    vol_ar_std: float = 0.0
    start_price_low: float = 20.0
    start_price_high: float = 120.0
    shares_low: float = 1e8
    shares_high: float = 1e9

    def validate(self) -> None:
        matrix = np.asarray(self.transition, dtype=np.float64)
        if matrix.shape != (2, 2) or np.any(matrix < 0) or np.any(matrix > 1):
            raise ConfigError("transition must be a 2x2 matrix of probabilities")
        if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigError("transition rows must each sum to 1")
        if self.bull_vol <= 0 or self.bear_vol <= 0 or self.idio_vol <= 0:
            raise ConfigError("volatilities must be > 0")
        for mode in (self.bull_mode, self.bear_mode):
            if mode not in ("momentum", "reversal"):
                raise ConfigError(f"anomaly mode must be momentum|reversal, got {mode!r}")
        if self.anomaly_strength < 0 or self.anomaly_scale < 0:
            raise ConfigError("anomaly strength and scale must be >= 0")
        if self.vol_premium < 0:
            raise ConfigError("vol_premium must be >= 0")
        if not 0.0 <= self.vol_ar_coef < 1.0 or self.vol_ar_std < 0:
            raise ConfigError("vol AR parameters out of range")

    @property
    def drifts(self) -> np.ndarray:
        return np.array([self.bull_drift, self.bear_drift])

    @property
    def vols(self) -> np.ndarray:
        return np.array([self.bull_vol, self.bear_vol])

    @property
    def modes(self) -> tuple[str, str]:
        return (self.bull_mode, self.bear_mode)

    def stationary(self) -> np.ndarray:
        a = self.transition[0][1]
        b = self.transition[1][0]
        if a + b == 0:
            return np.array([1.0, 0.0])
        return np.array([b / (a + b), a / (a + b)])


@dataclass
class SimPanel:
    """A generated panel plus the hidden truth needed for assertions."""

    panel: PricePanel
    regimes: pd.Series            # per emitted trading day, 0=bull 1=bear
    anomaly_modes: pd.Series      # per day, "momentum" | "reversal"
    params: RegimeParams
    seed: int = 0
    _pos: dict = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self._pos = {d: i for i, d in enumerate(self.regimes.index)}

    def regime_at(self, date: pd.Timestamp) -> int:
        pos = self._pos.get(pd.Timestamp(date))
        if pos is None:
            raise DataError(f"{date} outside the simulated range")
        return int(self.regimes.iloc[pos])


def simulate_regime_path(params: RegimeParams, n_days: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Sample the hidden chain; the initial state follows the stationary law."""
    matrix = np.asarray(params.transition)
    path = np.empty(n_days, dtype=np.int64)
    path[0] = rng.choice(2, p=params.stationary())
    draws = rng.random(n_days - 1) if n_days > 1 else np.empty(0)
    for t in range(1, n_days):
        stay = matrix[path[t - 1], path[t - 1]]
        path[t] = path[t - 1] if draws[t - 1] < stay else 1 - path[t - 1]
    return path


def _zscore_clipped(values: np.ndarray, clip: float = 3.0) -> np.ndarray:
    std = values.std()
    if std == 0.0:
        return np.zeros_like(values)
    return np.clip((values - values.mean()) / std, -clip, clip)


def simulate(params: RegimeParams, n_stocks: int, n_days: int,
             seed: int = 0, start: str = "2008-01-01") -> SimPanel:
    """Generate a panel of `n_stocks` over `n_days` trading days.

    A burn-in prefix (not emitted) warms up the trailing-return signals and
    the implied-vol window, so the anomaly is live from the first emitted day.
    """
    params.validate()
    if n_stocks < 20:
        raise ConfigError(f"n_stocks must be >= 20, got {n_stocks}")
    if n_days < 300:
        raise ConfigError(f"n_days must be >= 300, got {n_days}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = BURN_IN + n_days
    dates = pd.bdate_range(start=start, periods=n_days)
    burn_dates = pd.bdate_range(end=dates[0] - pd.Timedelta(days=1), periods=BURN_IN)
    dates_full = burn_dates.append(dates)
    month_of = dates_full.to_period("M")
    month_start = np.zeros(total, dtype=bool)
    month_start[0] = True
    month_start[1:] = month_of[1:] != month_of[:-1]

    regimes = simulate_regime_path(params, total, rng)
    drifts, vols = params.drifts, params.vols
    modes = params.modes

    vol_mult = np.ones(total)
    if params.vol_ar_std > 0:
        u = np.empty(total)
        stat_var = params.vol_ar_std ** 2 / (1.0 - params.vol_ar_coef ** 2)
        u[0] = rng.normal(0.0, np.sqrt(stat_var))
        eps = rng.normal(0.0, params.vol_ar_std, size=total - 1)
        for t in range(1, total):
            u[t] = params.vol_ar_coef * u[t - 1] + eps[t - 1]
        vol_mult = np.exp(u - stat_var / 2.0)  # mean-one lognormal modulation

    index_shocks = rng.normal(size=total)
    index_logret = drifts[regimes] + vols[regimes] * vol_mult * index_shocks

    betas = rng.uniform(params.beta_low, params.beta_high, size=n_stocks)
    idio = rng.normal(0.0, params.idio_vol, size=(total, n_stocks))

    # anomaly signals freeze at each month start so the injected drift
    # persists across a one-month holding window; the windows mirror what
    # the feature pipeline can observe at the prior month's formation date
    tilt_coef = params.anomaly_scale * params.anomaly_strength
    log_prices = np.zeros((total + 1, n_stocks))  # row 0 is the starting level
    stock_logret = np.empty((total, n_stocks))
    z_mom = np.zeros(n_stocks)
    z_rev = np.zeros(n_stocks)
    for t in range(total):
        if month_start[t]:
            if t >= MOMENTUM_WINDOW + SKIP_WINDOW:
                z_mom = _zscore_clipped(
                    log_prices[t - SKIP_WINDOW]
                    - log_prices[t - SKIP_WINDOW - MOMENTUM_WINDOW])
            if t >= REVERSAL_WINDOW:
                z_rev = _zscore_clipped(log_prices[t] - log_prices[t - REVERSAL_WINDOW])
        if tilt_coef > 0:
            if modes[regimes[t]] == "momentum":
                tilt = tilt_coef * z_mom
            else:
                tilt = -tilt_coef * z_rev
        else:
            tilt = 0.0
        stock_logret[t] = betas * index_logret[t] + idio[t] + tilt
        log_prices[t + 1] = log_prices[t] + stock_logret[t]

    # trailing realized vol marked up by the premium; computed on full history
    sq = index_logret ** 2
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    trailing_var = (csum[VIX_WINDOW:] - csum[:-VIX_WINDOW]) / VIX_WINDOW
    ann_var = 252.0 * trailing_var * (1.0 + params.vol_premium)
    vix_full = np.full(total, np.nan)
    vix_full[VIX_WINDOW - 1:] = 100.0 * np.sqrt(ann_var)

    emit = slice(BURN_IN, total)
    start_prices = rng.uniform(params.start_price_low, params.start_price_high,
                               size=n_stocks)
    rel = np.exp(log_prices[BURN_IN + 1:total + 1] - log_prices[BURN_IN])
    prices = start_prices * rel
    index_level = 100.0 * np.exp(np.cumsum(index_logret[emit]))
    shares = rng.uniform(params.shares_low, params.shares_high, size=n_stocks)

    tickers = [f"S{i:03d}" for i in range(n_stocks)]
    price_df = pd.DataFrame(prices, index=dates, columns=tickers)
    mcap_df = pd.DataFrame(prices * shares, index=dates, columns=tickers)
    index_series = pd.Series(index_level, index=dates, name="index_close")
    vix_series = pd.Series(vix_full[emit], index=dates, name="vix")
    panel = PricePanel(prices=price_df, index_close=index_series,
                       vix=vix_series, market_cap=mcap_df)

    regime_series = pd.Series(regimes[emit], index=dates, name="regime")
    mode_series = pd.Series([modes[r] for r in regimes[emit]], index=dates,
                            name="anomaly_mode")
    logger.info("simulated %d stocks x %d days (seed %d): %.1f%% bear days",
                n_stocks, n_days, seed, 100.0 * regime_series.mean())
    return SimPanel(panel=panel, regimes=regime_series,
                    anomaly_modes=mode_series, params=params, seed=seed)


def write_csvs(sim: SimPanel, out_dir: str | Path) -> dict[str, Path]:
    """Emit prices.csv / index.csv (the ingestion formats) plus regimes.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel = sim.panel
    paths = {"prices": out / "prices.csv", "index": out / "index.csv",
             "regimes": out / "regimes.csv"}

    with open(paths["prices"], "w", encoding="utf-8", newline="") as fh:
        fh.write("date,ticker,adj_close,market_cap\n")
        for i, date in enumerate(panel.dates):
            day = date.strftime("%Y-%m-%d")
            for j, ticker in enumerate(panel.prices.columns):
                fh.write(f"{day},{ticker},{float(panel.prices.iat[i, j])!r},"
                         f"{float(panel.market_cap.iat[i, j])!r}\n")

    with open(paths["index"], "w", encoding="utf-8", newline="") as fh:
        fh.write("date,index_close,vix\n")
        for i, date in enumerate(panel.dates):
            fh.write(f"{date.strftime('%Y-%m-%d')},"
                     f"{float(panel.index_close.iloc[i])!r},"
                     f"{float(panel.vix.iloc[i])!r}\n")

    with open(paths["regimes"], "w", encoding="utf-8", newline="") as fh:
        fh.write("date,regime,regime_name,anomaly_mode\n")
        for i, date in enumerate(sim.regimes.index):
            regime = int(sim.regimes.iloc[i])
            fh.write(f"{date.strftime('%Y-%m-%d')},{regime},"
                     f"{REGIME_NAMES[regime]},{sim.anomaly_modes.iloc[i]}\n")
    return paths
