"""Rolling-window backtest: train, score, form decile portfolios, report.

Windows step through the formation-month calendar: a fixed training span
(chronological 90/10 train/validation split by default) followed by a test
span, stepped so consecutive test spans tile the out-of-sample period. A
training formation month whose 20-day label window reaches into the test
span is embargoed from fitting; the engine asserts this date arithmetic for
every window and records the check in the report.

Portfolio convention: within each leg weights are equal; long weights sum
to +1 and short weights to -1 (delta neutral), and period PNL is reported
on unit gross capital, i.e. half the long-leg return minus half the
short-leg return. No transaction costs. Monthly PNL aggregates additively.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .blocks import build_model, mask_summary
from .errors import ConfigError, PortfolioError, RegimeLabError, UndefinedMetricError
from .features import (
    FEATURE_GROUPS,
    SampleSet,
    apply_zscore,
    assemble_samples,
    fit_zscore,
)
from .nncore import bce_loss
from .panel import PricePanel
from .training import TrainConfig, train_model

logger = logging.getLogger(__name__)

THREADS_ENV = "REGIME_LAB_THREADS"


@dataclass
class RollingWindow:
    """Spans are counted in formation months; validation is the final
    fraction of the train span, split chronologically."""

    train_months: int = 60
    val_fraction: float = 0.1
    test_months: int = 12
    step_months: int = 12

    def validate(self) -> None:
        if self.train_months < 2 or self.test_months < 1 or self.step_months < 1:
            raise ConfigError("window spans must be positive (train >= 2)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


@dataclass
class WindowSpec:
    index: int
    train_span: list          # nominal contiguous training months
    test_span: list           # test months (final window may be partial)


def roll_windows(months, window: RollingWindow) -> list[WindowSpec]:
    """Slice the month calendar into train/test windows.

    Test spans start right after their train span and tile forward by
    `step_months`; a final partial test span is kept. Returns fewer windows
    (with a warning) when history is short.
    """
    window.validate()
    months = list(months)
    if sorted(months) != months or len(set(months)) != len(months):
        raise ConfigError("month calendar must be sorted and unique")
    specs: list[WindowSpec] = []
    start = 0
    while True:
        train = months[start:start + window.train_months]
        test = months[start + window.train_months:
                      start + window.train_months + window.test_months]
        if len(train) < window.train_months or not test:
            break
        specs.append(WindowSpec(index=len(specs), train_span=train, test_span=test))
        if len(test) < window.test_months:
            break  # partial final span; nothing left after it
        start += window.step_months
    if not specs:
        logger.warning("calendar of %d months too short for train=%d test=%d",
                       len(months), window.train_months, window.test_months)
    return specs


@dataclass
class PortfolioSnapshot:
    """Equal-weight decile legs; long weights sum to +1, short to -1."""

    date: pd.Timestamp
    longs: dict[str, float]
    shorts: dict[str, float]

    @property
    def gross_exposure(self) -> float:
        return sum(self.longs.values()) - sum(self.shorts.values())

    def net_exposure(self) -> float:
        return sum(self.longs.values()) + sum(self.shorts.values())


def form_portfolio(date, tickers, probabilities, decile: float = 0.1) -> PortfolioSnapshot:
    """Long the top and short the bottom decile by predicted probability.

    Leg size is floor(n * decile) with a minimum of one name; ties break by
    ticker so the result is deterministic.
    """
    tickers = list(tickers)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    n = len(tickers)
    if n < 2:
        raise PortfolioError(f"need >= 2 scored tickers, got {n}")
    if len(set(tickers)) != n:
        raise PortfolioError("duplicate tickers in scored universe")
    k = max(1, math.floor(n * decile))
    if 2 * k > n:
        raise PortfolioError(f"decile {decile} too wide for {n} tickers")
    order = sorted(range(n), key=lambda i: (-probabilities[i], tickers[i]))
    longs = {tickers[i]: 1.0 / k for i in order[:k]}
    shorts = {tickers[i]: -1.0 / k for i in order[-k:]}
    return PortfolioSnapshot(date=pd.Timestamp(date), longs=longs, shorts=shorts)


def compute_pnl(snapshots: list[PortfolioSnapshot],
                forward_returns: dict[pd.Timestamp, dict[str, float]]) -> pd.Series:
    """Per-period PNL on unit gross capital, additive across periods.

    Tickers missing a forward return are dropped from their leg and the leg
    re-normalized; an emptied leg is an error.
    """
    dates, values = [], []
    for snap in snapshots:
        rets = forward_returns.get(snap.date)
        if rets is None:
            raise PortfolioError(f"no forward returns for {snap.date.date()}")
        pnl = 0.0
        for leg_name, leg, target in (("long", snap.longs, 1.0),
                                      ("short", snap.shorts, -1.0)):
            held = {t: w for t, w in leg.items() if t in rets}
            if not held:
                raise PortfolioError(f"{snap.date.date()}: {leg_name} leg empty "
                                     "after dropping missing returns")
            if len(held) != len(leg):
                dropped = sorted(set(leg) - set(held))
                logger.info("%s: dropped %s from %s leg (missing forward return)",
                            snap.date.date(), dropped, leg_name)
            scale = target / sum(held.values())
            pnl += sum(w * scale * rets[t] for t, w in sorted(held.items()))
        gross = 2.0
        dates.append(snap.date)
        values.append(pnl / gross)
    return pd.Series(values, index=pd.DatetimeIndex(dates), name="pnl")


def annualized_return(pnl: pd.Series) -> float:
    """Mean monthly PNL scaled to a year."""
    if len(pnl) < 1:
        raise UndefinedMetricError("empty PNL series")
    return float(pnl.mean() * 12.0)


def sharpe_from_annualized(mean_return: float, risk_free: float, std: float) -> float:
    if std <= 0.0:
        raise UndefinedMetricError("Sharpe undefined for zero standard deviation")
    return (mean_return - risk_free) / std


def sharpe_ratio(pnl: pd.Series, risk_free_annual: float = 0.0) -> float:
    """(annualized mean - risk free) / annualized std, monthly periods."""
    if len(pnl) < 2:
        raise UndefinedMetricError("Sharpe needs >= 2 periods")
    std = float(pnl.std(ddof=1)) * math.sqrt(12.0)
    return sharpe_from_annualized(annualized_return(pnl), risk_free_annual, std)


def evaluate_cross_entropy(model, X: np.ndarray, y: np.ndarray,
                           Xs: np.ndarray | None = None) -> float:
    """Mean unregularized binary cross-entropy of eval-mode predictions."""
    if y.shape[0] == 0:
        raise UndefinedMetricError("empty evaluation set")
    return bce_loss(model.predict(X, Xs), y)


def pearson_correlation(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson r, or None when either series has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std() == 0.0 or b.std() == 0.0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def mask_diagnostics(dates, masks: np.ndarray, vix: np.ndarray,
                     feature_groups: dict[str, list[int]] = FEATURE_GROUPS) -> dict:
    """Correlate per-date mask group weights against the implied-vol series."""
    if len(dates) < 3:
        raise UndefinedMetricError(f"mask diagnostics need >= 3 dates, got {len(dates)}")
    groups = mask_summary(masks, feature_groups)
    corr = {
        "vix_reversal": pearson_correlation(vix, groups["reversal"]),
        "vix_momentum": pearson_correlation(vix, groups["momentum"]),
        "reversal_momentum": pearson_correlation(groups["reversal"], groups["momentum"]),
    }
    return {
        "n_dates": len(dates),
        "correlations": corr,
        "undefined": sorted(k for k, v in corr.items() if v is None),
        "weights": {
            "dates": [pd.Timestamp(d).strftime("%Y-%m-%d") for d in dates],
            "momentum": groups["momentum"].tolist(),
            "reversal": groups["reversal"].tolist(),
            "january": groups["january"].tolist(),
        },
    }


@dataclass
class BacktestSettings:
    """Everything run_experiment needs besides the panel itself."""

    model_arch: dict
    train: TrainConfig
    window: RollingWindow
    decile: float = 0.1
    risk_free_rate: float = 0.0
    min_price: float = 5.0
    min_market_cap: float | None = 1e9
    holding: int = 20
    seed: int = 0


@dataclass
class WindowResult:
    index: int
    train_months: list[str]
    val_months: list[str]
    embargoed_months: list[str]
    test_months: list[str]
    n_train: int
    n_val: int
    n_test: int
    monthly_pnl: list[tuple[str, float]]
    annualized_return: float
    sharpe: float | None
    sharpe_undefined: bool
    in_sample_bce: float
    out_sample_bce: float
    best_val_bce: float | None
    hygiene_checks: int
    mask_dates: list[str] = field(default_factory=list)
    masks: np.ndarray | None = None


@dataclass
class BacktestReport:
    model_kind: str
    seed: int
    windows: list[WindowResult]
    aggregate: dict
    mask_report: dict | None
    assembly: dict
    hygiene: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "model_kind": self.model_kind,
            "seed": self.seed,
            "aggregate": self.aggregate,
            "windows": [
                {k: v for k, v in vars(w).items() if k not in ("masks",)}
                for w in self.windows
            ],
            "mask_diagnostics": self.mask_report,
            "assembly": self.assembly,
            "temporal_hygiene": self.hygiene,
        }


def _label_end_date(panel: PricePanel, formation: pd.Timestamp, holding: int):
    pos = panel.date_pos(formation)
    end = min(pos + holding, len(panel.dates) - 1)
    return panel.dates[end]


def _window_seed(base_seed: int, window_index: int) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(window_index,))
    init_seed, train_seed = (int(s) for s in ss.generate_state(2, np.uint64))
    return init_seed, train_seed


def _run_window(panel: PricePanel, samples: SampleSet, spec: WindowSpec,
                settings: BacktestSettings) -> WindowResult:
    months = samples.months()
    test_start_month = spec.test_span[0]
    test_start_date = panel.dates[panel.dates.to_period("M") >= test_start_month][0]

    usable, embargoed = [], []
    for m in spec.train_span:
        formation = panel.month_end(m)
        if _label_end_date(panel, formation, settings.holding) < test_start_date:
            usable.append(m)
        else:
            embargoed.append(m)
    if len(usable) < 2:
        raise ConfigError(f"window {spec.index}: train span too short after embargo")

    n_val = int(round(settings.window.val_fraction * len(usable)))
    val_months = usable[len(usable) - n_val:] if n_val else []
    fit_months = usable[:len(usable) - n_val] if n_val else usable
    if not fit_months:
        raise ConfigError(f"window {spec.index}: no fit months left")

    fit_mask = samples.month_mask(fit_months)
    val_mask = samples.month_mask(val_months)
    test_mask = samples.month_mask(spec.test_span)
    if not test_mask.any():
        raise ConfigError(f"window {spec.index}: no test samples")

    # temporal hygiene: every fit/val sample's label window ends before the
    # test span starts (features only look backwards from the formation date)
    checks = 0
    for date in pd.DatetimeIndex(samples.dates[fit_mask | val_mask]).unique():
        checks += 1
        if not (date < test_start_date
                and _label_end_date(panel, date, settings.holding) < test_start_date):
            raise RegimeLabError(
                f"window {spec.index}: train/val sample at {date.date()} leaks "
                f"into the test span starting {test_start_date.date()}"
            )

    mean, std = fit_zscore(samples.market_raw[fit_mask])
    needs_market = settings.model_arch.get("kind") == "switching_resnet"

    def block(mask: np.ndarray):
        X = samples.stock[mask]
        Xs = apply_zscore(samples.market_raw[mask], mean, std) if needs_market else None
        return X, Xs, samples.labels[mask]

    train_data = block(fit_mask)
    val_data = block(val_mask) if val_mask.any() else None

    init_seed, train_seed = _window_seed(settings.seed, spec.index)
    cfg = settings.train
    model = build_model(settings.model_arch, np.random.default_rng(init_seed),
                        slope=cfg.leaky_slope, dropout=cfg.dropout_rate)
    window_cfg = TrainConfig(**{**vars(cfg), "seed": train_seed})
    result = train_model(model, train_data, val_data, window_cfg)

    insample_mask = fit_mask | val_mask
    ins = block(insample_mask)
    in_bce = evaluate_cross_entropy(model, ins[0], ins[2], ins[1])

    test = block(test_mask)
    out_bce = evaluate_cross_entropy(model, test[0], test[2], test[1])

    snapshots = []
    fwd: dict[pd.Timestamp, dict[str, float]] = {}
    mask_dates: list[str] = []
    mask_rows: list[np.ndarray] = []
    test_months_present = [m for m in spec.test_span if (months == m).any()]
    for m in test_months_present:
        month_sel = test_mask & np.asarray(months == m)
        X, Xs, _ = block(month_sel)
        probs = model.predict(X, Xs)
        date = pd.Timestamp(samples.dates[month_sel][0])
        tickers = samples.tickers[month_sel]
        snapshots.append(form_portfolio(date, tickers, probs, settings.decile))
        fwd[date] = dict(zip(tickers, samples.forward_returns[month_sel]))
        if needs_market:
            mask_rows.append(model.conditional_mask(Xs[:1], training=False)[0])
            mask_dates.append(date.strftime("%Y-%m-%d"))

    pnl = compute_pnl(snapshots, fwd)
    try:
        sharpe = sharpe_ratio(pnl, settings.risk_free_rate)
        undefined = False
    except UndefinedMetricError:
        sharpe, undefined = None, True

    return WindowResult(
        index=spec.index,
        train_months=[str(m) for m in fit_months],
        val_months=[str(m) for m in val_months],
        embargoed_months=[str(m) for m in embargoed],
        test_months=[str(m) for m in test_months_present],
        n_train=int(fit_mask.sum()), n_val=int(val_mask.sum()),
        n_test=int(test_mask.sum()),
        monthly_pnl=[(d.strftime("%Y-%m-%d"), float(v)) for d, v in pnl.items()],
        annualized_return=annualized_return(pnl),
        sharpe=sharpe, sharpe_undefined=undefined,
        in_sample_bce=in_bce, out_sample_bce=out_bce,
        best_val_bce=result.best_val_metric,
        hygiene_checks=checks,
        mask_dates=mask_dates,
        masks=np.vstack(mask_rows) if mask_rows else None,
    )


def run_experiment(panel: PricePanel, settings: BacktestSettings) -> BacktestReport:
    """Assemble samples, roll windows, train/test each, aggregate a report."""
    settings.window.validate()
    settings.train.validate()
    samples, stats = assemble_samples(
        panel, min_price=settings.min_price,
        min_market_cap=settings.min_market_cap, holding=settings.holding)
    if samples.n == 0:
        raise ConfigError("no samples could be assembled from the panel")
    month_calendar = sorted(set(samples.months()))
    specs = roll_windows(month_calendar, settings.window)
    if not specs:
        raise ConfigError(
            f"history of {len(month_calendar)} formation months cannot fit "
            f"train={settings.window.train_months} + test span"
        )

    threads = max(1, int(os.environ.get(THREADS_ENV, "1") or "1"))
    if threads > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(specs))) as pool:
            futures = [pool.submit(_run_window, panel, samples, spec, settings)
                       for spec in specs]
            windows = [f.result() for f in futures]
    else:
        windows = [_run_window(panel, samples, spec, settings) for spec in specs]

    def _mean(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    aggregate = {
        "n_windows": len(windows),
        "mean_annualized_return": _mean([w.annualized_return for w in windows]),
        "mean_sharpe": _mean([w.sharpe for w in windows]),
        "mean_in_sample_bce": _mean([w.in_sample_bce for w in windows]),
        "mean_out_sample_bce": _mean([w.out_sample_bce for w in windows]),
    }

    mask_report = None
    if settings.model_arch.get("kind") == "switching_resnet":
        all_dates = [d for w in windows for d in w.mask_dates]
        if len(all_dates) >= 3:
            masks = np.vstack([w.masks for w in windows if w.masks is not None])
            vix = panel.vix.loc[pd.DatetimeIndex(all_dates)].to_numpy()
            mask_report = mask_diagnostics(pd.DatetimeIndex(all_dates), masks, vix)

    hygiene = {"windows_checked": len(windows),
               "formation_dates_checked": int(sum(w.hygiene_checks for w in windows)),
               "violations": 0}
    report = BacktestReport(
        model_kind=settings.model_arch.get("kind", "unknown"),
        seed=settings.seed,
        windows=windows,
        aggregate=aggregate,
        mask_report=mask_report,
        assembly={
            "rows": stats.rows,
            "months_used": stats.months_used,
            "dropped_samples": dict(sorted(stats.dropped_samples.items())),
            "skipped_months": dict(sorted(stats.skipped_months.items())),
            "drop_rate": stats.drop_rate,
        },
        hygiene=hygiene,
    )
    logger.info("backtest %s: %d windows, mean sharpe %s",
                report.model_kind, len(windows), aggregate["mean_sharpe"])
    return report
