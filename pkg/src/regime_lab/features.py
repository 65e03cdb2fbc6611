"""Feature and label construction from a price panel.

Per formation date (the last trading day of each month) every eligible
ticker gets a 33-wide stock block and shares a 41-wide market block:

    stock  [0:12]  monthly returns for lag months 2..13, most recent first,
                   z-scored across the date's cross-section
           [12:32] daily returns for the 20 trading days before formation,
                   most recent first, z-scored across the cross-section
           [32]    January indicator for the formation month (raw 0/1)

    market [0:12]  index realized variance per lag month 2..13 (mean of
                   squared daily log returns), most recent first
           [12:35] squared implied vol (vix/100)^2 for the 23 trading days
                   before formation, most recent first
           [35:41] variance risk premium for lag months 1..6, most recent
                   first: (vix/100)^2/12 at the lag month's end minus that
                   month's summed squared daily log returns

Market blocks are kept raw here; backtest windows z-score them with
training-span statistics so no test-span information leaks backwards.
Every value at formation date t is computable from data strictly before t.
Labels are median splits of the 20-trading-day forward return: strictly
above the cross-sectional median is class 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DegenerateCrossSectionError, RegimeLabError
from .panel import PricePanel

logger = logging.getLogger(__name__)

N_MONTHLY = 12
N_DAILY = 20
N_STOCK_FEATURES = N_MONTHLY + N_DAILY + 1          # 33
N_MARKET_VARIANCES = 12
N_SQ_VIX = 23
N_VRP = 6
N_MARKET_FEATURES = N_MARKET_VARIANCES + N_SQ_VIX + N_VRP  # 41
HOLDING_DAYS = 20

FEATURE_GROUPS: dict[str, list[int]] = {
    "momentum": list(range(0, N_MONTHLY)),
    "reversal": list(range(N_MONTHLY, N_MONTHLY + N_DAILY)),
    "january": [N_MONTHLY + N_DAILY],
}

STOCK_FEATURE_NAMES = (
    [f"mret_{k:02d}" for k in range(2, 14)]
    + [f"dret_{k:02d}" for k in range(1, 21)]
    + ["january"]
)
MARKET_FEATURE_NAMES = (
    [f"mvar_{k:02d}" for k in range(2, 14)]
    + [f"sqvix_{k:02d}" for k in range(1, 24)]
    + [f"vrp_{k:02d}" for k in range(1, 7)]
)


class FeatureUnavailable(RegimeLabError):
    """A sample cannot be built at this date; `reason` drives drop counters."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def _arrays(panel: PricePanel) -> dict:
    """Positional views over the panel, cached on the panel instance."""
    cache = panel.__dict__.get("_feature_arrays")
    if cache is not None:
        return cache
    months = panel.months()
    cache = {
        "prices": panel.prices.to_numpy(),
        "mcap": None if panel.market_cap is None else panel.market_cap.to_numpy(),
        "index": panel.index_close.to_numpy(),
        "vix": panel.vix.to_numpy(),
        "col": {t: i for i, t in enumerate(panel.prices.columns)},
        "date_pos": {d: i for i, d in enumerate(panel.dates)},
        "month_pos": {m: i for i, m in enumerate(months)},
        "month_end_pos": [panel.dates.get_indexer([d])[0] for d in panel.month_ends()],
        "months": list(months),
        "day_month": panel.dates.to_period("M"),
    }
    panel.__dict__["_feature_arrays"] = cache
    return cache


def _formation_month_pos(panel: PricePanel, formation: pd.Timestamp) -> int:
    arrs = _arrays(panel)
    month = pd.Period(formation, freq="M")
    mpos = arrs["month_pos"].get(month)
    if mpos is None:
        raise FeatureUnavailable("date_outside_panel")
    if panel.dates[arrs["month_end_pos"][mpos]] != formation:
        raise ValueError(f"{formation.date()} is not a month-end trading day")
    return mpos


def monthly_returns(panel: PricePanel, ticker: str, formation: pd.Timestamp) -> np.ndarray:
    """Raw returns over lag months 2..13, most recent first."""
    arrs = _arrays(panel)
    mpos = _formation_month_pos(panel, formation)
    if mpos - (N_MONTHLY + 2) < 0:
        raise FeatureUnavailable("insufficient_monthly_history")
    col = arrs["col"].get(ticker)
    if col is None:
        raise FeatureUnavailable("unknown_ticker")
    prices = arrs["prices"]
    ends = arrs["month_end_pos"]
    out = np.empty(N_MONTHLY)
    for i, k in enumerate(range(2, 2 + N_MONTHLY)):
        p1 = prices[ends[mpos - k], col]
        p0 = prices[ends[mpos - k - 1], col]
        if np.isnan(p0) or np.isnan(p1):
            raise FeatureUnavailable("missing_monthly_price")
        out[i] = p1 / p0 - 1.0
    return out


def daily_returns(panel: PricePanel, ticker: str, formation: pd.Timestamp) -> np.ndarray:
    """Raw returns of the 20 trading days before formation, most recent first."""
    arrs = _arrays(panel)
    dpos = arrs["date_pos"].get(formation)
    if dpos is None:
        raise FeatureUnavailable("date_outside_panel")
    if dpos - (N_DAILY + 1) < 0:
        raise FeatureUnavailable("insufficient_daily_history")
    col = arrs["col"].get(ticker)
    if col is None:
        raise FeatureUnavailable("unknown_ticker")
    window = arrs["prices"][dpos - N_DAILY - 1:dpos, col]
    if np.any(np.isnan(window)):
        raise FeatureUnavailable("missing_daily_price")
    rets = window[1:] / window[:-1] - 1.0
    return rets[::-1].copy()


def january_flag(formation: pd.Timestamp) -> float:
    return 1.0 if formation.month == 1 else 0.0


def cross_sectional_normalize(values: np.ndarray) -> np.ndarray:
    """Per-date z-score (population std); a constant cross-section maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        raise DegenerateCrossSectionError(
            f"cross-sectional normalization needs >= 2 values, got {values.shape[0]}"
        )
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    z = np.zeros_like(values)
    nonzero = std > 0.0
    if values.ndim == 1:
        if nonzero:
            z = (values - mean) / std
    else:
        z[:, nonzero] = (values[:, nonzero] - mean[nonzero]) / std[nonzero]
    return z


def _month_log_returns(panel: PricePanel, month: pd.Period) -> np.ndarray:
    """Daily log returns of the index for one month, vs previous trading day."""
    arrs = _arrays(panel)
    if month not in arrs["month_pos"]:
        raise FeatureUnavailable("month_outside_panel")
    day_month = arrs["day_month"]
    positions = np.flatnonzero(day_month == month)
    positions = positions[positions > 0]  # first panel day has no prior close
    if positions.size == 0:
        raise FeatureUnavailable("empty_month")
    index = arrs["index"]
    return np.log(index[positions] / index[positions - 1])


def realized_volatility(panel: PricePanel, month: pd.Period) -> float:
    """Mean of squared daily log index returns over the month's trading days."""
    logret = _month_log_returns(panel, month)
    return float(np.mean(logret ** 2))


def realized_volatility_detail(panel: PricePanel, month: pd.Period) -> tuple[float, int]:
    """Like realized_volatility but also reports the day count used."""
    logret = _month_log_returns(panel, month)
    return float(np.mean(logret ** 2)), int(logret.size)


def monthly_realized_variance(panel: PricePanel, month: pd.Period) -> float:
    """Sum of squared daily log index returns over the month (monthly scale)."""
    logret = _month_log_returns(panel, month)
    return float(np.sum(logret ** 2))


def vix_implied_monthly_variance(vix_value: float) -> float:
    """Annualized percent quote -> one-month variance: (vix/100)^2 / 12."""
    return (vix_value / 100.0) ** 2 / 12.0


def variance_risk_premium(implied_monthly_variance: float,
                          realized_monthly_variance: float) -> float:
    """Implied minus realized variance on the same monthly scale; may be negative."""
    return implied_monthly_variance - realized_monthly_variance


def market_features(panel: PricePanel, formation: pd.Timestamp) -> np.ndarray:
    """The raw 41-wide market-condition block at a formation date."""
    arrs = _arrays(panel)
    mpos = _formation_month_pos(panel, formation)
    months = arrs["months"]
    if mpos - (N_MARKET_VARIANCES + 1) < 0:
        raise FeatureUnavailable("insufficient_market_history")
    dpos = arrs["date_pos"][formation]
    if dpos - N_SQ_VIX < 0:
        raise FeatureUnavailable("insufficient_vix_history")

    out = np.empty(N_MARKET_FEATURES)
    for i, k in enumerate(range(2, 2 + N_MARKET_VARIANCES)):
        out[i] = realized_volatility(panel, months[mpos - k])

    vix_window = arrs["vix"][dpos - N_SQ_VIX:dpos]
    if np.any(np.isnan(vix_window)):
        raise FeatureUnavailable("missing_vix")
    out[N_MARKET_VARIANCES:N_MARKET_VARIANCES + N_SQ_VIX] = \
        (vix_window[::-1] / 100.0) ** 2

    ends = arrs["month_end_pos"]
    for j in range(1, N_VRP + 1):
        month = months[mpos - j]
        vix_at_end = arrs["vix"][ends[mpos - j]]
        if np.isnan(vix_at_end):
            raise FeatureUnavailable("missing_vix")
        implied = vix_implied_monthly_variance(vix_at_end)
        realized = monthly_realized_variance(panel, month)
        out[N_MARKET_VARIANCES + N_SQ_VIX + j - 1] = \
            variance_risk_premium(implied, realized)
    return out


def forward_return(panel: PricePanel, ticker: str, formation: pd.Timestamp,
                   holding: int = HOLDING_DAYS) -> float:
    """Simple return from formation close to the close `holding` days later."""
    arrs = _arrays(panel)
    dpos = arrs["date_pos"].get(formation)
    if dpos is None:
        raise FeatureUnavailable("date_outside_panel")
    if dpos + holding >= arrs["prices"].shape[0]:
        raise FeatureUnavailable("forward_window_incomplete")
    col = arrs["col"].get(ticker)
    if col is None:
        raise FeatureUnavailable("unknown_ticker")
    p0 = arrs["prices"][dpos, col]
    p1 = arrs["prices"][dpos + holding, col]
    if np.isnan(p0):
        raise FeatureUnavailable("missing_formation_price")
    if np.isnan(p1):
        raise FeatureUnavailable("delisted_in_holding_window")
    return float(p1 / p0 - 1.0)


def universe_filter(panel: PricePanel, formation: pd.Timestamp,
                    min_price: float = 5.0,
                    min_market_cap: float | None = 1e9) -> list[str]:
    """Tickers tradable at formation: price above the floor, cap above the
    threshold when cap data is supplied. Applied at formation only."""
    arrs = _arrays(panel)
    dpos = arrs["date_pos"].get(formation)
    if dpos is None:
        raise FeatureUnavailable("date_outside_panel")
    prices = arrs["prices"][dpos]
    keep = prices > min_price
    if min_market_cap is not None and arrs["mcap"] is not None:
        caps = arrs["mcap"][dpos]
        keep &= caps > min_market_cap
    tickers = panel.prices.columns
    return [tickers[i] for i in np.flatnonzero(keep)]


def build_labels(forward_returns: np.ndarray) -> np.ndarray:
    """Median split: strictly above the cross-sectional median is class 1."""
    forward_returns = np.asarray(forward_returns, dtype=np.float64)
    if forward_returns.shape[0] < 2:
        raise DegenerateCrossSectionError("median labels need >= 2 tickers")
    median = np.median(forward_returns)
    return (forward_returns > median).astype(np.float64)


@dataclass
class SampleSet:
    """Row-aligned features, labels and keys for a span of formation dates."""

    dates: pd.DatetimeIndex
    tickers: np.ndarray
    stock: np.ndarray          # (n, 33)
    market_raw: np.ndarray     # (n, 41)
    labels: np.ndarray
    forward_returns: np.ndarray

    @property
    def n(self) -> int:
        return len(self.dates)

    def months(self) -> pd.PeriodIndex:
        return self.dates.to_period("M")

    def select(self, mask: np.ndarray) -> "SampleSet":
        return SampleSet(self.dates[mask], self.tickers[mask], self.stock[mask],
                         self.market_raw[mask], self.labels[mask],
                         self.forward_returns[mask])

    def month_mask(self, months) -> np.ndarray:
        wanted = set(months)
        return np.array([m in wanted for m in self.months()], dtype=bool)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "date": self.dates.strftime("%Y-%m-%d"),
            "ticker": self.tickers,
            "label": self.labels,
            "forward_return": self.forward_returns,
        })
        for i, name in enumerate(STOCK_FEATURE_NAMES):
            df[name] = self.stock[:, i]
        for i, name in enumerate(MARKET_FEATURE_NAMES):
            df[name] = self.market_raw[:, i]
        return df


@dataclass
class AssemblyStats:
    rows: int = 0
    months_used: int = 0
    dropped_samples: dict[str, int] = field(default_factory=dict)
    skipped_months: dict[str, int] = field(default_factory=dict)

    def _bump(self, table: dict[str, int], reason: str, k: int = 1) -> None:
        table[reason] = table.get(reason, 0) + k

    @property
    def dropped_total(self) -> int:
        return sum(self.dropped_samples.values())

    @property
    def drop_rate(self) -> float:
        attempted = self.rows + self.dropped_total
        return self.dropped_total / attempted if attempted else 0.0


def assemble_samples(panel: PricePanel,
                     first_month: pd.Period | None = None,
                     last_month: pd.Period | None = None,
                     min_price: float = 5.0,
                     min_market_cap: float | None = 1e9,
                     holding: int = HOLDING_DAYS) -> tuple[SampleSet, AssemblyStats]:
    """Build the full sample set over the panel's formation months.

    Months whose market block or cross-section cannot be built are skipped;
    individual tickers failing any feature are dropped and counted.
    """
    stats = AssemblyStats()
    dates_out: list[pd.Timestamp] = []
    tickers_out: list[str] = []
    stock_out: list[np.ndarray] = []
    market_out: list[np.ndarray] = []
    labels_out: list[np.ndarray] = []
    fwd_out: list[np.ndarray] = []

    for month, formation in zip(panel.months(), panel.month_ends()):
        if first_month is not None and month < first_month:
            continue
        if last_month is not None and month > last_month:
            continue
        try:
            market = market_features(panel, formation)
        except FeatureUnavailable as exc:
            stats._bump(stats.skipped_months, exc.reason)
            continue

        rows: list[tuple[str, np.ndarray, float]] = []
        for ticker in universe_filter(panel, formation, min_price, min_market_cap):
            try:
                feats = np.concatenate([
                    monthly_returns(panel, ticker, formation),
                    daily_returns(panel, ticker, formation),
                    [january_flag(formation)],
                ])
                fwd = forward_return(panel, ticker, formation, holding)
            except FeatureUnavailable as exc:
                stats._bump(stats.dropped_samples, exc.reason)
                continue
            if not np.all(np.isfinite(feats)) or not np.isfinite(fwd):
                stats._bump(stats.dropped_samples, "non_finite_feature")
                continue
            rows.append((ticker, feats, fwd))

        if len(rows) < 2:
            stats._bump(stats.skipped_months, "thin_cross_section")
            stats._bump(stats.dropped_samples, "thin_cross_section", len(rows))
            continue

        raw = np.stack([feats for _, feats, _ in rows])
        raw[:, :N_MONTHLY + N_DAILY] = cross_sectional_normalize(
            raw[:, :N_MONTHLY + N_DAILY])
        fwd = np.array([f for _, _, f in rows])
        labels = build_labels(fwd)

        for i, (ticker, _, _) in enumerate(rows):
            dates_out.append(formation)
            tickers_out.append(ticker)
        stock_out.append(raw)
        market_out.append(np.tile(market, (len(rows), 1)))
        labels_out.append(labels)
        fwd_out.append(fwd)
        stats.months_used += 1
        stats.rows += len(rows)

    if not stock_out:
        empty = np.empty((0,))
        samples = SampleSet(pd.DatetimeIndex([]), np.array([], dtype=object),
                            np.empty((0, N_STOCK_FEATURES)),
                            np.empty((0, N_MARKET_FEATURES)), empty, empty.copy())
    else:
        samples = SampleSet(
            dates=pd.DatetimeIndex(dates_out),
            tickers=np.array(tickers_out, dtype=object),
            stock=np.vstack(stock_out),
            market_raw=np.vstack(market_out),
            labels=np.concatenate(labels_out),
            forward_returns=np.concatenate(fwd_out),
        )
    if stats.dropped_total:
        logger.info("assembled %d rows over %d months; dropped %d (%s)",
                    stats.rows, stats.months_used, stats.dropped_total,
                    dict(sorted(stats.dropped_samples.items())))
    else:
        logger.info("assembled %d rows over %d months", stats.rows, stats.months_used)
    return samples, stats


def fit_zscore(train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean/std (population) from training rows only."""
    return train.mean(axis=0), train.std(axis=0)


def apply_zscore(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Apply stored statistics; constant training columns map to zeros."""
    out = np.zeros_like(x, dtype=np.float64)
    ok = std > 0.0
    out[:, ok] = (x[:, ok] - mean[ok]) / std[ok]
    return out
