"""Price panel: per-ticker adjusted closes plus index and implied-vol series.

Input contracts (UTF-8, ISO-8601 dates):

    stock CSV  header ``date,ticker,adj_close`` with optional ``market_cap``
    index CSV  header ``date,index_close,vix``

Validation failures raise DataError with 1-based line numbers. The index
CSV defines the trading-day calendar; every stock row must fall on it.
Missing implied-vol values are forward-filled up to 3 trading days, beyond
that they stay absent and downstream samples needing them are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

VIX_FFILL_LIMIT = 3


def _lines(index_positions) -> str:
    """Render pandas row positions as CSV line numbers (header = line 1)."""
    nums = [int(i) + 2 for i in list(index_positions)[:5]]
    suffix = ", ..." if len(index_positions) > 5 else ""
    return ", ".join(str(n) for n in nums) + suffix


def _parse_dates(raw: pd.Series, path: str) -> pd.Series:
    parsed = pd.to_datetime(raw, format="ISO8601", errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        raise DataError(f"{path}: unparseable ISO-8601 date at line(s) {_lines(bad)}")
    return parsed


def _require_columns(df: pd.DataFrame, required: list[str], optional: list[str],
                     path: str) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing required column(s) {missing}")
    unknown = [c for c in df.columns if c not in required + optional]
    if unknown:
        raise DataError(f"{path}: unknown column(s) {unknown}")


@dataclass
class PricePanel:
    """Aligned trading-day panel; all frames share one DatetimeIndex."""

    prices: pd.DataFrame                 # rows: trading days, cols: tickers
    index_close: pd.Series
    vix: pd.Series
    market_cap: pd.DataFrame | None = None
    _month_ends: pd.DatetimeIndex = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.validate()
        by_month = pd.Series(self.dates, index=self.dates).groupby(
            self.dates.to_period("M")).last()
        self._month_ends = pd.DatetimeIndex(by_month.values)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.prices.index

    @property
    def tickers(self) -> list[str]:
        return list(self.prices.columns)

    def validate(self) -> None:
        dates = self.prices.index
        if not dates.is_monotonic_increasing or dates.has_duplicates:
            raise DataError("panel dates must be strictly increasing and unique")
        for series, name in ((self.index_close, "index_close"),):
            if not series.index.equals(dates):
                raise DataError(f"{name} calendar differs from price calendar")
            if not (series.to_numpy() > 0).all():
                raise DataError(f"{name} must be strictly positive")
        if not self.vix.index.equals(dates):
            raise DataError("vix calendar differs from price calendar")
        vix_vals = self.vix.to_numpy()
        if np.any(vix_vals[~np.isnan(vix_vals)] <= 0):
            raise DataError("vix values must be strictly positive where present")
        values = self.prices.to_numpy()
        if np.any(values[~np.isnan(values)] <= 0):
            raise DataError("prices must be strictly positive where present")
        # listed range must be gap-free: absence is only allowed at the edges
        for ticker in self.prices.columns:
            col = self.prices[ticker]
            first, last = col.first_valid_index(), col.last_valid_index()
            if first is None:
                raise DataError(f"ticker {ticker} has no price data")
            inner = col.loc[first:last]
            gaps = inner.index[inner.isna()]
            if len(gaps):
                raise DataError(
                    f"ticker {ticker} has gap(s) inside its listed range, "
                    f"first at {gaps[0].date()}"
                )
        if self.market_cap is not None:
            if not self.market_cap.index.equals(dates):
                raise DataError("market_cap calendar differs from price calendar")
            mc = self.market_cap.to_numpy()
            if np.any(mc[~np.isnan(mc)] <= 0):
                raise DataError("market_cap must be strictly positive where present")

    # --- calendar helpers -------------------------------------------------

    def month_ends(self) -> pd.DatetimeIndex:
        """Last trading day of each month present in the panel."""
        return self._month_ends

    def months(self) -> pd.PeriodIndex:
        return self._month_ends.to_period("M")

    def month_end(self, month: pd.Period) -> pd.Timestamp | None:
        ends = self._month_ends
        pos = ends.to_period("M").get_indexer([month])[0]
        return None if pos < 0 else ends[pos]

    def date_pos(self, date: pd.Timestamp) -> int:
        pos = self.dates.get_indexer([date])[0]
        if pos < 0:
            raise DataError(f"{date.date()} is not a trading day in the panel")
        return int(pos)


def load_stock_csv(path: str | Path) -> tuple[pd.DataFrame, pd.DataFrame | None]:
    """Read the stock CSV into wide price (and optional market-cap) frames."""
    path = str(path)
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"stock price file not found: {path}")
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV ({exc})")
    _require_columns(df, ["date", "ticker", "adj_close"], ["market_cap"], path)
    df = df.reset_index(drop=True)
    df["date"] = _parse_dates(df["date"], path)

    close = pd.to_numeric(df["adj_close"], errors="coerce")
    bad = np.flatnonzero(~(close.to_numpy() > 0))
    if bad.size:
        raise DataError(f"{path}: adj_close must be a positive number, "
                        f"bad value(s) at line(s) {_lines(bad)}")
    df["adj_close"] = close

    dup = df.duplicated(subset=["date", "ticker"], keep=False)
    if dup.any():
        raise DataError(f"{path}: duplicate (date, ticker) row(s) at "
                        f"line(s) {_lines(np.flatnonzero(dup.to_numpy()))}")

    prices = df.pivot(index="date", columns="ticker", values="adj_close").sort_index()
    prices.columns = [str(c) for c in prices.columns]
    prices = prices[sorted(prices.columns)]

    mcap = None
    if "market_cap" in df.columns:
        mc = pd.to_numeric(df["market_cap"], errors="coerce")
        supplied = df["market_cap"].notna()
        bad = np.flatnonzero((supplied & ~(mc > 0)).to_numpy())
        if bad.size:
            raise DataError(f"{path}: market_cap must be positive where present, "
                            f"bad value(s) at line(s) {_lines(bad)}")
        df["market_cap"] = mc
        mcap = df.pivot(index="date", columns="ticker", values="market_cap").sort_index()
        mcap.columns = [str(c) for c in mcap.columns]
        mcap = mcap[sorted(mcap.columns)]
    return prices, mcap


def load_index_csv(path: str | Path) -> tuple[pd.Series, pd.Series]:
    """Read the index CSV; returns (index_close, vix) on the trading calendar."""
    path = str(path)
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"index file not found: {path}")
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV ({exc})")
    _require_columns(df, ["date", "index_close", "vix"], [], path)
    df = df.reset_index(drop=True)
    df["date"] = _parse_dates(df["date"], path)
    dup = df["date"].duplicated(keep=False)
    if dup.any():
        raise DataError(f"{path}: duplicate date row(s) at "
                        f"line(s) {_lines(np.flatnonzero(dup.to_numpy()))}")

    close = pd.to_numeric(df["index_close"], errors="coerce")
    bad = np.flatnonzero(~(close.to_numpy() > 0))
    if bad.size:
        raise DataError(f"{path}: index_close must be a positive number, "
                        f"bad value(s) at line(s) {_lines(bad)}")

    vix = pd.to_numeric(df["vix"], errors="coerce")
    supplied = df["vix"].notna()
    bad = np.flatnonzero((supplied & ~(vix > 0)).to_numpy())
    if bad.size:
        raise DataError(f"{path}: vix must be positive where present, "
                        f"bad value(s) at line(s) {_lines(bad)}")

    order = np.argsort(df["date"].to_numpy(), kind="stable")
    dates = pd.DatetimeIndex(df["date"].to_numpy()[order])
    index_close = pd.Series(close.to_numpy()[order], index=dates, name="index_close")
    vix_series = pd.Series(vix.to_numpy()[order], index=dates, name="vix")
    n_missing = int(vix_series.isna().sum())
    if n_missing:
        vix_series = vix_series.ffill(limit=VIX_FFILL_LIMIT)
        left = int(vix_series.isna().sum())
        logger.info("vix: forward-filled %d missing day(s), %d remain absent",
                    n_missing - left, left)
    return index_close, vix_series


def load_panel(prices_csv: str | Path, index_csv: str | Path) -> PricePanel:
    """Assemble a validated panel; the index CSV defines the calendar."""
    prices, mcap = load_stock_csv(prices_csv)
    index_close, vix = load_index_csv(index_csv)
    calendar = index_close.index
    off_calendar = prices.index.difference(calendar)
    if len(off_calendar):
        raise DataError(
            f"{prices_csv}: {len(off_calendar)} stock date(s) not on the index "
            f"calendar, first {off_calendar[0].date()}"
        )
    prices = prices.reindex(calendar)
    if mcap is not None:
        mcap = mcap.reindex(calendar)
    return PricePanel(prices=prices, index_close=index_close, vix=vix,
                      market_cap=mcap)
