"""Backtest mechanics: windows, portfolios, PNL, metrics, reports."""

import json
import math

import numpy as np
import pandas as pd
import pytest

from regime_lab.backtest import (
    BacktestSettings,
    RollingWindow,
    annualized_return,
    compute_pnl,
    evaluate_cross_entropy,
    form_portfolio,
    mask_diagnostics,
    pearson_correlation,
    roll_windows,
    run_experiment,
    sharpe_from_annualized,
    sharpe_ratio,
)
from regime_lab.blocks import build_model
from regime_lab.errors import ConfigError, PortfolioError, UndefinedMetricError
from regime_lab.marketsim import RegimeParams, simulate
from regime_lab.nncore import bce_loss
from regime_lab.reports import write_backtest_files
from regime_lab.training import TrainConfig


def _months(start: str, n: int):
    return list(pd.period_range(start, periods=n, freq="M"))


class TestRollWindows:
    def test_six_year_calendar_single_window(self):
        specs = roll_windows(_months("2008-01", 72),
                             RollingWindow(60, 0.1, 12, 12))
        assert len(specs) == 1
        assert [str(m) for m in specs[0].test_span][:1] == ["2013-01"]

    def test_paper_setup_five_test_spans(self):
        # 9.5 years of months: 2008-01 .. 2017-06
        specs = roll_windows(_months("2008-01", 114),
                             RollingWindow(60, 0.1, 12, 12))
        assert len(specs) == 5
        starts = [str(s.test_span[0]) for s in specs]
        assert starts == ["2013-01", "2014-01", "2015-01", "2016-01", "2017-01"]
        assert len(specs[-1].test_span) == 6  # H1 2017 partial span
        covered = [m for s in specs for m in s.test_span]
        assert len(covered) == len(set(covered))  # each test month exactly once

    def test_train_strictly_precedes_test(self):
        specs = roll_windows(_months("2010-01", 90), RollingWindow(48, 0.1, 12, 12))
        for spec in specs:
            assert max(spec.train_span) < min(spec.test_span)
            assert not set(spec.train_span) & set(spec.test_span)

    def test_short_calendar_warns_and_returns_empty(self, caplog):
        with caplog.at_level("WARNING"):
            specs = roll_windows(_months("2020-01", 24), RollingWindow(60, 0.1, 12, 12))
        assert specs == []
        assert "too short" in caplog.text


class TestFormPortfolio:
    def test_twenty_tickers_two_per_leg(self):
        tickers = [f"T{i:02d}" for i in range(20)]
        probs = np.linspace(0.05, 0.95, 20)
        snap = form_portfolio("2020-01-31", tickers, probs)
        assert set(snap.longs) == {"T19", "T18"}
        assert set(snap.shorts) == {"T00", "T01"}
        assert sum(snap.longs.values()) == pytest.approx(1.0)
        assert sum(snap.shorts.values()) == pytest.approx(-1.0)
        assert snap.net_exposure() == pytest.approx(0.0, abs=1e-12)

    def test_equal_probabilities_tie_break(self):
        tickers = ["DD", "CC", "BB", "AA"]
        snap = form_portfolio("2020-01-31", tickers, np.full(4, 0.5))
        assert set(snap.longs) == {"AA"}   # lexicographic winner
        assert set(snap.shorts) == {"DD"}  # lexicographic tail
        assert not set(snap.longs) & set(snap.shorts)

    def test_two_thousand_tickers(self):
        rng = np.random.default_rng(0)
        tickers = [f"S{i:04d}" for i in range(2000)]
        snap = form_portfolio("2020-01-31", tickers, rng.random(2000))
        assert len(snap.longs) == 200 and len(snap.shorts) == 200

    def test_single_ticker_rejected(self):
        with pytest.raises(PortfolioError):
            form_portfolio("2020-01-31", ["A"], np.array([0.9]))

    def test_gross_exposure(self):
        snap = form_portfolio("2020-01-31", ["A", "B"], np.array([0.9, 0.1]))
        assert snap.gross_exposure == pytest.approx(2.0)


class TestComputePnl:
    def _snap(self, date, longs, shorts):
        from regime_lab.backtest import PortfolioSnapshot
        return PortfolioSnapshot(pd.Timestamp(date), longs, shorts)

    def test_symmetric_win(self):
        snap = self._snap("2020-01-31", {"A": 1.0}, {"B": -1.0})
        pnl = compute_pnl([snap], {pd.Timestamp("2020-01-31"): {"A": 0.10, "B": -0.10}})
        assert pnl.iloc[0] == pytest.approx(0.10)  # half-weight legs

    def test_equal_returns_delta_neutral_zero(self):
        snap = self._snap("2020-01-31", {"A": 1.0}, {"B": -1.0})
        pnl = compute_pnl([snap], {pd.Timestamp("2020-01-31"): {"A": 0.07, "B": 0.07}})
        assert pnl.iloc[0] == pytest.approx(0.0, abs=1e-15)

    def test_three_date_manual_fixture(self):
        # spreadsheet-style oracle, worked by hand:
        #   d1: long A +10%, short D -5%  -> (0.10 + 0.05)/2 = 0.075
        #   d2: long B -2%,  short A +4%  -> (-0.02 - 0.04)/2 = -0.03
        #   d3: long A +6%,  short D +6%  -> 0
        dates = [pd.Timestamp(d) for d in
                 ("2020-01-31", "2020-02-28", "2020-03-31")]
        snaps = [
            self._snap(dates[0], {"A": 1.0}, {"D": -1.0}),
            self._snap(dates[1], {"B": 1.0}, {"A": -1.0}),
            self._snap(dates[2], {"A": 1.0}, {"D": -1.0}),
        ]
        returns = {
            dates[0]: {"A": 0.10, "D": -0.05},
            dates[1]: {"B": -0.02, "A": 0.04},
            dates[2]: {"A": 0.06, "D": 0.06},
        }
        pnl = compute_pnl(snaps, returns)
        np.testing.assert_allclose(pnl.to_numpy(), [0.075, -0.03, 0.0], atol=1e-15)
        assert annualized_return(pnl) == pytest.approx(0.015 * 12)
        mean = 0.015
        sample_var = sum((x - mean) ** 2 for x in (0.075, -0.03, 0.0)) / 2
        expected_sharpe = (mean * 12) / (math.sqrt(sample_var) * math.sqrt(12))
        assert sharpe_ratio(pnl) == pytest.approx(expected_sharpe, rel=1e-12)

    def test_missing_return_drops_and_renormalizes(self, caplog):
        snap = self._snap("2020-01-31", {"A": 0.5, "B": 0.5}, {"C": -1.0})
        returns = {pd.Timestamp("2020-01-31"): {"A": 0.10, "C": 0.0}}
        with caplog.at_level("INFO"):
            pnl = compute_pnl([snap], returns)
        assert pnl.iloc[0] == pytest.approx(0.05)  # A re-weighted to full leg
        assert "dropped" in caplog.text

    def test_empty_leg_is_error(self):
        snap = self._snap("2020-01-31", {"A": 1.0}, {"B": -1.0})
        with pytest.raises(PortfolioError, match="empty"):
            compute_pnl([snap], {pd.Timestamp("2020-01-31"): {"B": 0.0}})


class TestSharpe:
    def test_table_footnote_formula(self):
        assert sharpe_from_annualized(0.10, 0.02, 0.04) == pytest.approx(2.0)

    def test_series_matching_annualized_inputs(self):
        m = 0.10 / 12
        d = 0.04 / math.sqrt(12) / math.sqrt(2)
        series = pd.Series([m + d, m - d],
                           index=pd.DatetimeIndex(["2020-01-31", "2020-02-29"]))
        assert sharpe_ratio(series, risk_free_annual=0.02) == pytest.approx(2.0)

    def test_constant_series_undefined(self):
        series = pd.Series([0.01, 0.01, 0.01],
                           index=pd.date_range("2020-01-31", periods=3, freq="ME"))
        with pytest.raises(UndefinedMetricError):
            sharpe_ratio(series)

    def test_needs_two_periods(self):
        series = pd.Series([0.01], index=pd.DatetimeIndex(["2020-01-31"]))
        with pytest.raises(UndefinedMetricError):
            sharpe_ratio(series)


class TestCrossEntropyEvaluation:
    def test_untrained_model_near_chance(self):
        model = build_model({"kind": "linear", "in_dim": 4})  # zero init
        X = np.random.default_rng(0).normal(size=(100, 4))
        y = np.array([0.0, 1.0] * 50)
        assert evaluate_cross_entropy(model, X, y) == pytest.approx(math.log(2))

    def test_perfect_probabilities_near_zero(self):
        model = build_model({"kind": "linear", "in_dim": 1})
        model.head.weight.value = np.array([[100.0]])
        X = np.array([[1.0], [-1.0], [1.0]])
        y = np.array([1.0, 0.0, 1.0])
        assert evaluate_cross_entropy(model, X, y) < 1e-10

    def test_four_row_manual_case(self):
        probs = np.array([0.8, 0.3, 0.6, 0.9])
        y = np.array([1.0, 0.0, 1.0, 0.0])
        manual = -(math.log(0.8) + math.log(0.7) + math.log(0.6) + math.log(0.1)) / 4
        assert bce_loss(probs, y) == pytest.approx(manual, rel=1e-12)


class TestMaskDiagnostics:
    def test_constant_masks_flagged_undefined(self):
        dates = pd.date_range("2020-01-31", periods=5, freq="ME")
        masks = np.full((5, 33), 1.0 / 33)
        vix = np.linspace(10, 30, 5)
        out = mask_diagnostics(dates, masks, vix)
        assert out["correlations"]["vix_reversal"] is None
        assert set(out["undefined"]) == {"vix_reversal", "vix_momentum",
                                         "reversal_momentum"}

    def test_constructed_perfect_correlation(self):
        dates = pd.date_range("2020-01-31", periods=6, freq="ME")
        vix = np.array([10.0, 15.0, 20.0, 25.0, 30.0, 35.0])
        a = (vix - 5.0) / 40.0  # reversal weight tracks vix exactly
        masks = np.zeros((6, 33))
        masks[:, 12] = a          # a reversal column
        masks[:, 0] = 1.0 - a     # a momentum column
        out = mask_diagnostics(dates, masks, vix)
        assert out["correlations"]["vix_reversal"] == pytest.approx(1.0)
        assert out["correlations"]["vix_momentum"] == pytest.approx(-1.0)
        assert out["correlations"]["reversal_momentum"] == pytest.approx(-1.0)

    def test_too_few_dates(self):
        dates = pd.date_range("2020-01-31", periods=2, freq="ME")
        with pytest.raises(UndefinedMetricError):
            mask_diagnostics(dates, np.full((2, 33), 1 / 33), np.array([10.0, 11.0]))

    def test_pearson_zero_variance_none(self):
        assert pearson_correlation(np.ones(5), np.arange(5.0)) is None


@pytest.fixture(scope="module")
def small_sim():
    return simulate(RegimeParams(), n_stocks=25, n_days=1300, seed=7)


def _linear_settings(seed=3):
    return BacktestSettings(
        model_arch={"kind": "linear", "in_dim": 33},
        train=TrainConfig(batch_size=256, epochs=10, dropout_rate=0.0,
                          noise_std=0.05, lambda_init=1e-4, lr_init=5e-3,
                          validate_every=20, seed=seed),
        window=RollingWindow(train_months=24, val_fraction=0.1,
                             test_months=6, step_months=6),
        seed=seed,
    )


class TestRunExperiment:
    def test_report_structure_and_hygiene(self, small_sim):
        report = run_experiment(small_sim.panel, _linear_settings())
        assert report.aggregate["n_windows"] == len(report.windows) > 0
        assert report.hygiene["violations"] == 0
        assert report.hygiene["formation_dates_checked"] > 0
        for w in report.windows:
            # the embargoed month is the nominal train month whose labels
            # would overlap the test span
            assert len(w.embargoed_months) >= 1
            assert w.test_months[0] not in w.train_months + w.val_months
            assert len(w.monthly_pnl) == len(w.test_months)

    def test_aggregate_means_match_recomputation(self, small_sim):
        report = run_experiment(small_sim.panel, _linear_settings())
        agg = report.aggregate
        assert agg["mean_annualized_return"] == pytest.approx(
            np.mean([w.annualized_return for w in report.windows]))
        assert agg["mean_in_sample_bce"] == pytest.approx(
            np.mean([w.in_sample_bce for w in report.windows]))

    def test_deterministic_reports_byte_identical(self, small_sim, tmp_path):
        payloads = []
        for sub in ("a", "b"):
            report = run_experiment(small_sim.panel, _linear_settings())
            paths = write_backtest_files(report, tmp_path / sub)
            payloads.append({k: p.read_bytes() for k, p in paths.items()})
        assert payloads[0] == payloads[1]

    def test_switching_model_produces_mask_report(self, small_sim, tmp_path):
        settings = _linear_settings()
        settings.model_arch = {"kind": "switching_resnet", "main_width": 33,
                               "main_blocks": 1, "switch_width": 41,
                               "switch_blocks": 1}
        settings.train.epochs = 3
        report = run_experiment(small_sim.panel, settings)
        assert report.mask_report is not None
        n_dates = report.mask_report["n_dates"]
        assert n_dates == sum(len(w.test_months) for w in report.windows)
        paths = write_backtest_files(report, tmp_path / "switch")
        mask_csv = paths["mask_weights"].read_text().splitlines()
        assert len(mask_csv) == 1 + n_dates
        assert mask_csv[0].startswith("date,w00,")
        # schema-identical reports across models: same JSON top-level keys
        linear_report = run_experiment(small_sim.panel, _linear_settings())
        assert set(report.to_dict()) == set(linear_report.to_dict())

    def test_insufficient_history_raises(self, small_sim):
        settings = _linear_settings()
        settings.window = RollingWindow(train_months=200, val_fraction=0.1,
                                        test_months=12, step_months=12)
        with pytest.raises(ConfigError):
            run_experiment(small_sim.panel, settings)
