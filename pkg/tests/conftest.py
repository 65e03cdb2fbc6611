"""Shared fixtures: a deterministic 5-ticker, 30-month panel."""

import numpy as np
import pandas as pd
import pytest

from regime_lab.panel import PricePanel

TICKERS = ["AAA", "BBB", "CCC", "DDD", "EEE"]
START_PRICES = [50.0, 30.0, 80.0, 9.0, 6.5]
SHARES = [8e7, 5e7, 2e8, 4e8, 1.5e8]  # DDD/EEE caps hover near the 1e9 floor


def build_fixture_panel(seed: int = 424242) -> PricePanel:
    """30 months of business days, 5 tickers, index and implied-vol series.

    Deterministic; prices follow lognormal walks so some DDD/EEE dates fall
    below the $5 price floor or the market-cap threshold, exercising the
    universe filter inside the oracle comparison.
    """
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range("2015-01-01", "2017-06-30")
    n = len(dates)

    rets = rng.normal(loc=0.0002, scale=0.02, size=(n, len(TICKERS)))
    prices = np.array(START_PRICES) * np.exp(np.cumsum(rets, axis=0))
    index_rets = rng.normal(loc=0.0001, scale=0.01, size=n)
    index_close = 2000.0 * np.exp(np.cumsum(index_rets))
    vix = 10.0 + 15.0 * rng.random(n)

    price_df = pd.DataFrame(prices, index=dates, columns=TICKERS)
    mcap_df = price_df * np.array(SHARES)
    return PricePanel(
        prices=price_df,
        index_close=pd.Series(index_close, index=dates, name="index_close"),
        vix=pd.Series(vix, index=dates, name="vix"),
        market_cap=mcap_df,
    )


@pytest.fixture(scope="session")
def fixture_panel() -> PricePanel:
    return build_fixture_panel()
