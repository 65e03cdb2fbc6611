"""CLI surface: subcommands, exit codes, resolved-config emission."""

import json
import subprocess
import sys

import pytest

from regime_lab.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from regime_lab.config import load_config_file, resolve
from regime_lab.errors import ConfigError


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    """A small simulated data set shared by the CLI tests."""
    out = tmp_path_factory.mktemp("simdata")
    config = out / "sim.json"
    config.write_text(json.dumps({
        "seed": 5,
        "out_dir": str(out / "csv"),
        "sim": {"n_stocks": 22, "n_days": 1800},
    }))
    assert main(["simulate", "--config", str(config)]) == EXIT_OK
    return out / "csv"


def _backtest_config(tmp_path, sim_dir, **overrides):
    config = {
        "seed": 2,
        "out_dir": str(tmp_path / "run"),
        "data": {"prices_csv": str(sim_dir / "prices.csv"),
                 "index_csv": str(sim_dir / "index.csv")},
        "model": {"kind": "linear"},
        "train": {"batch_size": 256, "epochs": 4, "dropout_rate": 0.0,
                  "noise_std": 0.05, "lambda_init": 1e-4, "lr_init": 5e-3,
                  "validate_every": 50},
        "window": {"train_months": 24, "val_fraction": 0.1,
                   "test_months": 12, "step_months": 12},
    }
    config.update(overrides)
    path = tmp_path / "backtest.json"
    path.write_text(json.dumps(config))
    return path


class TestSimulate:
    def test_outputs_exist_and_reingest(self, sim_dir):
        for name in ("prices.csv", "index.csv", "regimes.csv",
                     "resolved_config.json"):
            assert (sim_dir / name).exists()
        from regime_lab.panel import load_panel
        panel = load_panel(sim_dir / "prices.csv", sim_dir / "index.csv")
        assert len(panel.tickers) == 22

    def test_same_seed_byte_identical(self, tmp_path):
        for sub in ("x", "y"):
            config = tmp_path / f"{sub}.json"
            config.write_text(json.dumps({
                "seed": 9, "out_dir": str(tmp_path / sub),
                "sim": {"n_stocks": 20, "n_days": 320}}))
            assert main(["simulate", "--config", str(config)]) == EXIT_OK
        for name in ("prices.csv", "index.csv", "regimes.csv"):
            assert (tmp_path / "x" / name).read_bytes() == \
                (tmp_path / "y" / name).read_bytes()

    def test_seed_override_changes_output(self, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({
            "seed": 1, "out_dir": str(tmp_path / "a"),
            "sim": {"n_stocks": 20, "n_days": 320}}))
        assert main(["simulate", "--config", str(config)]) == EXIT_OK
        assert main(["simulate", "--config", str(config), "--seed", "2",
                     "--out", str(tmp_path / "b")]) == EXIT_OK
        assert (tmp_path / "a" / "prices.csv").read_bytes() != \
            (tmp_path / "b" / "prices.csv").read_bytes()
        resolved = json.loads((tmp_path / "b" / "resolved_config.json").read_text())
        assert resolved["seed"] == 2


class TestBacktestCommand:
    def test_end_to_end_linear(self, tmp_path, sim_dir):
        config = _backtest_config(tmp_path, sim_dir)
        assert main(["backtest", "--config", str(config)]) == EXIT_OK
        run = tmp_path / "run"
        for name in ("report.json", "pnl_monthly.csv", "metrics_by_window.csv",
                     "mask_weights.csv", "mask_correlations.csv",
                     "resolved_config.json"):
            assert (run / name).exists()
        report = json.loads((run / "report.json").read_text())
        assert report["model_kind"] == "linear"
        assert report["temporal_hygiene"]["violations"] == 0

    def test_missing_price_file_is_data_error(self, tmp_path, sim_dir):
        config = _backtest_config(
            tmp_path, sim_dir,
            data={"prices_csv": str(tmp_path / "absent.csv"),
                  "index_csv": str(sim_dir / "index.csv")})
        assert main(["backtest", "--config", str(config)]) == EXIT_DATA

    def test_unknown_config_key_is_config_error(self, tmp_path, sim_dir, capsys):
        path = _backtest_config(tmp_path, sim_dir)
        raw = json.loads(path.read_text())
        raw["windw"] = {}
        path.write_text(json.dumps(raw))
        assert main(["backtest", "--config", str(path)]) == EXIT_CONFIG
        assert "windw" in capsys.readouterr().err

    def test_model_override_schema_identical_reports(self, tmp_path, sim_dir):
        config = _backtest_config(tmp_path, sim_dir,
                                  model={"kind": "linear"},
                                  train={"batch_size": 256, "epochs": 2,
                                         "dropout_rate": 0.0, "noise_std": 0.05,
                                         "lambda_init": 1e-4, "validate_every": 50})
        assert main(["backtest", "--config", str(config),
                     "--out", str(tmp_path / "lin")]) == EXIT_OK
        assert main(["backtest", "--config", str(config), "--model",
                     "switching_resnet", "--out", str(tmp_path / "sw")]) == EXIT_OK
        lin = json.loads((tmp_path / "lin" / "report.json").read_text())
        sw = json.loads((tmp_path / "sw" / "report.json").read_text())
        assert set(lin) == set(sw)
        assert sw["model_kind"] == "switching_resnet"
        assert sw["mask_diagnostics"] is not None
        assert lin["mask_diagnostics"] is None

    def test_no_out_dir_is_config_error(self, tmp_path, sim_dir):
        config = _backtest_config(tmp_path, sim_dir, out_dir=None)
        assert main(["backtest", "--config", str(config)]) == EXIT_CONFIG


class TestRvCommand:
    def test_end_to_end(self, tmp_path, sim_dir):
        config = tmp_path / "rv.json"
        config.write_text(json.dumps({
            "seed": 4, "out_dir": str(tmp_path / "rv_run"),
            "data": {"index_csv": str(sim_dir / "index.csv")},
            "rv": {"train_months": 48, "test_months": 12},
            "train": {"batch_size": 16, "epochs": 20, "dropout_rate": 0.05,
                      "noise_std": 0.02, "lambda_init": 1e-4,
                      "validate_every": 20},
        }))
        assert main(["rv", "--config", str(config)]) == EXIT_OK
        csv = (tmp_path / "rv_run" / "rv_report.csv").read_text().splitlines()
        assert csv[0] == "model,in_sample_r2,out_sample_r2"
        assert len(csv) == 9  # header + all eight benchmark rows
        assert (tmp_path / "rv_run" / "rv_report.json").exists()

    def test_deterministic_per_seed(self, tmp_path, sim_dir):
        base = {
            "seed": 4, "data": {"index_csv": str(sim_dir / "index.csv")},
            "rv": {"train_months": 48, "test_months": 12},
            "train": {"batch_size": 16, "epochs": 10, "dropout_rate": 0.0,
                      "noise_std": 0.02, "lambda_init": 1e-4,
                      "validate_every": 20},
        }
        for sub in ("r1", "r2"):
            config = tmp_path / f"{sub}.json"
            config.write_text(json.dumps({**base, "out_dir": str(tmp_path / sub)}))
            assert main(["rv", "--config", str(config)]) == EXIT_OK
        assert (tmp_path / "r1" / "rv_report.csv").read_bytes() == \
            (tmp_path / "r2" / "rv_report.csv").read_bytes()

    def test_malformed_key_names_the_key(self, tmp_path, sim_dir, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({
            "seed": 1, "out_dir": str(tmp_path / "o"),
            "data": {"index_csv": str(sim_dir / "index.csv")},
            "rv": {"trane_months": 10},
        }))
        assert main(["rv", "--config", str(config)]) == EXIT_CONFIG
        assert "trane_months" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_runs_and_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--seeds", "2",
                     "--out", str(tmp_path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "switching_resnet" in out and "ok" in out
        payload = json.loads((tmp_path / "gradcheck.json").read_text())
        assert all(entry["passed"] for entry in payload.values())


class TestConfigResolution:
    def test_defaults_expanded(self):
        resolved = resolve({"data": {"prices_csv": "p", "index_csv": "i"}},
                           "backtest")
        assert resolved["train"]["batch_size"] == 512
        assert resolved["train"]["lambda_init"] == 50.0
        assert resolved["window"]["train_months"] == 60
        assert resolved["portfolio"]["decile"] == 0.1
        assert resolved["universe"]["min_market_cap"] == 1e9

    def test_nested_unknown_key_path_reported(self):
        with pytest.raises(ConfigError, match="backtest.train"):
            resolve({"data": {"prices_csv": "p", "index_csv": "i"},
                     "train": {"learning": 1}}, "backtest")

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="expected int"):
            resolve({"seed": "five", "data": {"prices_csv": "p",
                                              "index_csv": "i"}}, "backtest")

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="prices_csv"):
            resolve({"data": {"index_csv": "i"}}, "backtest")

    def test_choice_validation(self):
        with pytest.raises(ConfigError, match="one of"):
            resolve({"data": {"prices_csv": "p", "index_csv": "i"},
                     "model": {"kind": "svm"}}, "backtest")

    def test_config_file_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config_file(bad)


def test_console_script_installed():
    result = subprocess.run([sys.executable, "-m", "regime_lab.cli", "--version"],
                            capture_output=True, text=True)
    assert result.returncode == 0
