"""Run configuration: JSON files validated against strict schemas.

Unknown keys are rejected with their dotted path, types are enforced, and
defaults are expanded so the fully-resolved dictionary written next to a
run's outputs reproduces it exactly. One schema per subcommand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backtest import BacktestSettings, RollingWindow
from .errors import ConfigError
from .marketsim import RegimeParams
from .training import TrainConfig
from .volpredict import RvSettings

_REQUIRED = object()


@dataclass
class Key:
    types: tuple
    default: Any = _REQUIRED
    choices: tuple | None = None
    none_ok: bool = False


def _number(default=_REQUIRED, none_ok=False):
    return Key((int, float), default, none_ok=none_ok)


def _integer(default=_REQUIRED):
    return Key((int,), default)


def _text(default=_REQUIRED, choices=None, none_ok=False):
    return Key((str,), default, choices, none_ok)


TRAIN_SCHEMA = {
    "batch_size": _integer(512),
    "lr_init": _number(1e-3),
    "lr_decay": _number(0.995),
    "lambda_init": _number(50.0),
    "lambda_decay": _number(0.999),
    "dropout_rate": _number(0.5),
    "noise_std": _number(0.1),
    "leaky_slope": _number(0.01),
    "epochs": _integer(5),
    "validate_every": _integer(200),
    "adam_beta1": _number(0.9),
    "adam_beta2": _number(0.999),
    "adam_epsilon": _number(1e-8),
}

WINDOW_SCHEMA = {
    "train_months": _integer(60),
    "val_fraction": _number(0.1),
    "test_months": _integer(12),
    "step_months": _integer(12),
}

MODEL_SCHEMA = {
    "kind": _text("attention_resnet",
                  choices=("linear", "ann", "attention_resnet", "switching_resnet")),
    "width": _integer(33),
    "hidden_layers": _integer(22),
    "n_blocks": _integer(11),
    "attention_blocks": Key((list,), [0, 2, 4, 6, 8, 10]),
    "attention_hidden": Key((int,), None, none_ok=True),
    "main_width": _integer(33),
    "main_blocks": _integer(3),
    "switch_width": _integer(41),
    "switch_blocks": _integer(3),
    "bn_momentum": _number(0.99),
}

REGIME_SCHEMA = {
    "bull_drift": _number(0.0004),
    "bull_vol": _number(0.008),
    "bull_mode": _text("momentum", choices=("momentum", "reversal")),
    "bear_drift": _number(-0.0004),
    "bear_vol": _number(0.020),
    "bear_mode": _text("reversal", choices=("momentum", "reversal")),
    "anomaly_strength": _number(0.5),
    "anomaly_scale": _number(0.006),
    "transition": Key((list,), [[0.992, 0.008], [0.012, 0.988]]),
    "vol_premium": _number(0.2),
    "idio_vol": _number(0.02),
    "beta_low": _number(0.8),
    "beta_high": _number(1.2),
    "vol_ar_coef": _number(0.0),
    "vol_ar_std": _number(0.0),
    "start_price_low": _number(20.0),
    "start_price_high": _number(120.0),
    "shares_low": _number(1e8),
    "shares_high": _number(1e9),
}

SCHEMAS: dict[str, dict] = {
    "simulate": {
        "seed": _integer(0),
        "out_dir": _text(None, none_ok=True),
        "sim": {
            "n_stocks": _integer(50),
            "n_days": _integer(2016),
            "start_date": _text("2008-01-01"),
            "regime": REGIME_SCHEMA,
        },
    },
    "backtest": {
        "seed": _integer(0),
        "out_dir": _text(None, none_ok=True),
        "holding_days": _integer(20),
        "data": {"prices_csv": _text(), "index_csv": _text()},
        "model": MODEL_SCHEMA,
        "train": TRAIN_SCHEMA,
        "window": WINDOW_SCHEMA,
        "portfolio": {"decile": _number(0.1), "risk_free_rate": _number(0.0)},
        "universe": {"min_price": _number(5.0),
                     "min_market_cap": _number(1e9, none_ok=True)},
    },
    "rv": {
        "seed": _integer(0),
        "out_dir": _text(None, none_ok=True),
        "data": {"index_csv": _text()},
        "rv": {"train_months": _integer(120), "test_months": _integer(36),
               "val_fraction": _number(0.1)},
        "train": TRAIN_SCHEMA,
    },
}

ARCH_KEYS = {
    "linear": (),
    "ann": ("width", "hidden_layers"),
    "attention_resnet": ("width", "n_blocks", "attention_blocks", "attention_hidden"),
    "switching_resnet": ("main_width", "main_blocks", "switch_width", "switch_blocks"),
}


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config


def resolve(config: dict, command: str) -> dict:
    """Validate against the command schema and expand every default."""
    schema = SCHEMAS.get(command)
    if schema is None:
        raise ConfigError(f"unknown command: {command}")
    return _resolve_section(config, schema, path=command)


def _resolve_section(section: Any, schema: dict, path: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(section) - set(schema))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    out: dict = {}
    for name, spec in schema.items():
        dotted = f"{path}.{name}"
        if isinstance(spec, dict):
            out[name] = _resolve_section(section.get(name, {}), spec, dotted)
            continue
        if name not in section:
            if spec.default is _REQUIRED:
                raise ConfigError(f"{dotted}: required key missing")
            out[name] = spec.default
            continue
        value = section[name]
        if value is None:
            if not spec.none_ok:
                raise ConfigError(f"{dotted}: null not allowed")
            out[name] = None
            continue
        if isinstance(value, bool) or not isinstance(value, spec.types):
            raise ConfigError(
                f"{dotted}: expected {'/'.join(t.__name__ for t in spec.types)}, "
                f"got {type(value).__name__}"
            )
        if spec.choices is not None and value not in spec.choices:
            raise ConfigError(f"{dotted}: must be one of {list(spec.choices)}")
        out[name] = value
    return out


def model_arch_from_config(model_cfg: dict) -> dict:
    """Reduce the resolved model section to the active architecture keys."""
    kind = model_cfg["kind"]
    arch = {"kind": kind}
    for key in ARCH_KEYS[kind]:
        arch[key] = model_cfg[key]
    if kind in ("linear",):
        arch["in_dim"] = 33
    if kind == "ann":
        arch["in_dim"] = 33
    return arch


def train_config_from(resolved_train: dict, seed: int) -> TrainConfig:
    cfg = TrainConfig(seed=seed, **resolved_train)
    cfg.validate()
    return cfg


def backtest_settings_from(resolved: dict) -> BacktestSettings:
    window = RollingWindow(**resolved["window"])
    settings = BacktestSettings(
        model_arch=model_arch_from_config(resolved["model"]),
        train=train_config_from(resolved["train"], resolved["seed"]),
        window=window,
        decile=resolved["portfolio"]["decile"],
        risk_free_rate=resolved["portfolio"]["risk_free_rate"],
        min_price=resolved["universe"]["min_price"],
        min_market_cap=resolved["universe"]["min_market_cap"],
        holding=resolved["holding_days"],
        seed=resolved["seed"],
    )
    return settings


def rv_settings_from(resolved: dict) -> RvSettings:
    return RvSettings(
        train_months=resolved["rv"]["train_months"],
        test_months=resolved["rv"]["test_months"],
        val_fraction=resolved["rv"]["val_fraction"],
        train=train_config_from(resolved["train"], resolved["seed"]),
        seed=resolved["seed"],
    )


def regime_params_from(resolved_sim: dict) -> RegimeParams:
    regime = dict(resolved_sim["regime"])
    transition = regime.pop("transition")
    try:
        rows = tuple(tuple(float(x) for x in row) for row in transition)
    except (TypeError, ValueError):
        raise ConfigError("sim.regime.transition must be a 2x2 numeric matrix")
    params = RegimeParams(transition=rows, **regime)
    params.validate()
    return params
