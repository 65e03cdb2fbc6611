"""Command-line entry point.

Subcommands:
    simulate   generate a synthetic regime-switching panel as CSVs
    backtest   rolling-window long-short backtest of a configured model
    rv         realized-volatility prediction benchmark
    gradcheck  finite-difference verification of all analytic gradients

Every run writes its fully-resolved configuration (defaults expanded) next
to its outputs. Exit codes: 0 success, 2 configuration error, 3 data error,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .backtest import run_experiment
from .config import (
    backtest_settings_from,
    load_config_file,
    model_arch_from_config,
    regime_params_from,
    resolve,
    rv_settings_from,
)
from .errors import ConfigError, DataError, RegimeLabError
from .gradcheck import REL_TOL, run_standard_suite
from .marketsim import simulate, write_csvs
from .panel import load_panel
from .reports import write_backtest_files, write_resolved_config, write_rv_files
from .volpredict import run_rv_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regime-lab",
        description="Long-short equity lab: switching residual networks, "
                    "synthetic regime markets, backtests, volatility prediction.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config,
                       help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("simulate", help="generate synthetic panel CSVs"))
    p_back = sub.add_parser("backtest", help="run the rolling-window backtest")
    common(p_back)
    p_back.add_argument("--model", default=None,
                        choices=("linear", "ann", "attention_resnet", "switching_resnet"),
                        help="override the configured model kind")
    common(sub.add_parser("rv", help="run the volatility prediction benchmark"))
    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--config", required=False, default=None)
    p_grad.add_argument("--seeds", type=int, default=20)
    p_grad.add_argument("--out", default=None)
    return parser


def _prepare(args, command: str) -> tuple[dict, Path]:
    config = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out_dir"] = args.out
    if getattr(args, "model", None) is not None:
        config.setdefault("model", {})["kind"] = args.model
    resolved = resolve(config, command)
    if not resolved.get("out_dir"):
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    return resolved, out_dir


def cmd_simulate(args) -> int:
    resolved, out_dir = _prepare(args, "simulate")
    params = regime_params_from(resolved["sim"])
    sim = simulate(params, n_stocks=resolved["sim"]["n_stocks"],
                   n_days=resolved["sim"]["n_days"], seed=resolved["seed"],
                   start=resolved["sim"]["start_date"])
    paths = write_csvs(sim, out_dir)
    write_resolved_config(out_dir, resolved)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    resolved, out_dir = _prepare(args, "backtest")
    settings = backtest_settings_from(resolved)
    panel = load_panel(resolved["data"]["prices_csv"], resolved["data"]["index_csv"])
    report = run_experiment(panel, settings)
    paths = write_backtest_files(report, out_dir)
    write_resolved_config(out_dir, resolved)
    agg = report.aggregate
    print(f"model={report.model_kind} windows={agg['n_windows']} "
          f"mean_annualized_return={agg['mean_annualized_return']:.4f} "
          f"mean_sharpe={agg['mean_sharpe'] if agg['mean_sharpe'] is not None else 'undefined'}")
    print(f"report: {paths['report']}")
    return EXIT_OK


def cmd_rv(args) -> int:
    resolved, out_dir = _prepare(args, "rv")
    settings = rv_settings_from(resolved)
    # the experiment needs only the index series; no stock file is read
    panel = _index_only_panel(resolved["data"]["index_csv"])
    report = run_rv_experiment(panel, settings)
    paths = write_rv_files(report, out_dir)
    write_resolved_config(out_dir, resolved)
    for model in sorted(report.results):
        row = report.results[model]
        print(f"{model}: in={row['in_sample_r2']:.4f} out={row['out_sample_r2']:.4f}")
    print(f"report: {paths['report']}")
    return EXIT_OK


def _index_only_panel(index_csv: str):
    """Panel with a placeholder ticker so volatility samples can be built."""
    import pandas as pd

    from .panel import PricePanel, load_index_csv
    index_close, vix = load_index_csv(index_csv)
    prices = pd.DataFrame({"_INDEX": index_close.to_numpy()}, index=index_close.index)
    return PricePanel(prices=prices, index_close=index_close, vix=vix)


def cmd_gradcheck(args) -> int:
    reports = run_standard_suite(seeds=args.seeds)
    worst = 0.0
    for rep in reports:
        status = "ok" if rep.passed else "FAIL"
        worst = max(worst, rep.max_rel_error)
        print(f"{rep.name}: params={rep.n_params} seeds={rep.seeds} "
              f"max_rel_error={rep.max_rel_error:.3e} ({rep.elapsed_s:.1f}s) {status}")
    if args.out:
        from .reports import write_json
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "gradcheck.json",
                   {r.name: {"max_rel_error": r.max_rel_error, "params": r.n_params,
                             "seeds": r.seeds, "passed": r.passed} for r in reports})
    if worst >= REL_TOL:
        print(f"gradient check FAILED: {worst:.3e} >= {REL_TOL}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "backtest": cmd_backtest,
            "rv": cmd_rv, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RegimeLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except MemoryError:
        print("runtime error: out of memory", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
