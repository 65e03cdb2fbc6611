"""Deterministic report emission: JSON plus flat CSVs.

Floats are rendered with `repr` (shortest round-trip form) and keys are
sorted, so identical runs produce byte-identical files. No timestamps or
absolute paths appear in any report file.

CSV schemas:
    pnl_monthly.csv        window,date,pnl,cumulative_pnl
    metrics_by_window.csv  window,train_start,train_end,test_start,test_end,
                           n_train,n_val,n_test,annualized_return,sharpe,
                           in_sample_bce,out_sample_bce
    mask_weights.csv       date,w00..w32,momentum_weight,reversal_weight,
                           january_weight
    mask_correlations.csv  pair,correlation,defined
    rv_report.csv          model,in_sample_r2,out_sample_r2
"""

from __future__ import annotations

import json
from pathlib import Path

from .backtest import BacktestReport
from .blocks import mask_summary
from .features import FEATURE_GROUPS
from .volpredict import MODEL_ORDER, RvReport


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # builtin float: numpy scalars repr differently
    return str(value)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.write_text(dump_json(obj), encoding="utf-8")
    return path


def write_resolved_config(out_dir: str | Path, resolved: dict) -> Path:
    return write_json(Path(out_dir) / "resolved_config.json", resolved)


def write_backtest_files(report: BacktestReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": write_json(out / "report.json", report.to_dict())}

    lines = ["window,date,pnl,cumulative_pnl"]
    cumulative = 0.0
    for w in report.windows:
        for date, pnl in w.monthly_pnl:
            cumulative += pnl
            lines.append(f"{w.index},{date},{_fmt(pnl)},{_fmt(cumulative)}")
    paths["pnl"] = out / "pnl_monthly.csv"
    paths["pnl"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["window,train_start,train_end,test_start,test_end,n_train,n_val,"
             "n_test,annualized_return,sharpe,in_sample_bce,out_sample_bce"]
    for w in report.windows:
        lines.append(",".join([
            str(w.index), w.train_months[0], w.train_months[-1],
            w.test_months[0], w.test_months[-1],
            str(w.n_train), str(w.n_val), str(w.n_test),
            _fmt(w.annualized_return), _fmt(w.sharpe),
            _fmt(w.in_sample_bce), _fmt(w.out_sample_bce),
        ]))
    paths["metrics"] = out / "metrics_by_window.csv"
    paths["metrics"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    width = 33
    header = (["date"] + [f"w{i:02d}" for i in range(width)]
              + ["momentum_weight", "reversal_weight", "january_weight"])
    lines = [",".join(header)]
    for w in report.windows:
        if w.masks is None:
            continue
        groups = mask_summary(w.masks, FEATURE_GROUPS)
        for row, date in enumerate(w.mask_dates):
            cells = [date] + [_fmt(float(v)) for v in w.masks[row]]
            cells += [_fmt(float(groups[g][row]))
                      for g in ("momentum", "reversal", "january")]
            lines.append(",".join(cells))
    paths["mask_weights"] = out / "mask_weights.csv"
    paths["mask_weights"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["pair,correlation,defined"]
    if report.mask_report is not None:
        corr = report.mask_report["correlations"]
        for pair in ("vix_reversal", "vix_momentum", "reversal_momentum"):
            value = corr[pair]
            lines.append(f"{pair},{_fmt(value)},{str(value is not None).lower()}")
    paths["mask_correlations"] = out / "mask_correlations.csv"
    paths["mask_correlations"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def write_rv_files(report: RvReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": write_json(out / "rv_report.json", report.to_dict())}
    lines = ["model,in_sample_r2,out_sample_r2"]
    for name in MODEL_ORDER:
        row = report.results[name]
        lines.append(f"{name},{_fmt(row['in_sample_r2'])},{_fmt(row['out_sample_r2'])}")
    paths["csv"] = out / "rv_report.csv"
    paths["csv"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths
