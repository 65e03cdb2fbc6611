"""Stand-alone realized-volatility prediction experiment.

Targets are next month's index realized volatility (mean of squared daily
log returns); inputs are the 41 market-condition features at the formation
month end, z-scored with training-span statistics. Eight models run on the
byte-identical chronological split: last-value persistence, OLS linear
regression, 1-3 hidden-layer ANNs, and residual stacks of 1-3 blocks
(2/4/6 parameter layers). Out-of-sample R^2 measures against the
training-span target mean so the test span never leaks into the reference.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .blocks import build_model
from .errors import ConfigError, UndefinedMetricError
from .features import (
    FeatureUnavailable,
    N_MARKET_FEATURES,
    apply_zscore,
    fit_zscore,
    market_features,
    realized_volatility_detail,
)
from .panel import PricePanel
from .training import TrainConfig, train_model

logger = logging.getLogger(__name__)

MODEL_ORDER = ["persistence", "linear", "ann_1", "ann_2", "ann_3",
               "resnet_2", "resnet_4", "resnet_6"]


def r_squared(predictions: np.ndarray, targets: np.ndarray,
              baseline_mean: float) -> float:
    """1 - SS_res / SS_tot with SS_tot measured against `baseline_mean`."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or targets.size < 2:
        raise UndefinedMetricError(
            f"R^2 needs matched series of length >= 2, got "
            f"{predictions.shape} vs {targets.shape}"
        )
    ss_tot = float(np.sum((targets - baseline_mean) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 undefined: zero total variance")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


def persistence_predictions(rv: np.ndarray) -> np.ndarray:
    """Random-walk baseline: predict this month's value for next month.

    Input is the realized series ordered in time; output[i] predicts rv[i]
    using rv[i-1], so the first element has no prediction and is dropped by
    callers (returned array aligns with rv[1:]).
    """
    rv = np.asarray(rv, dtype=np.float64)
    if rv.size < 2:
        raise UndefinedMetricError("persistence needs >= 2 observations")
    return rv[:-1].copy()


def fit_linear(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS with intercept via normal equations; tiny ridge on singular designs.

    Returns coefficients with the intercept last.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] <= X.shape[1]:
        raise ConfigError(
            f"linear fit needs more rows ({X.shape[0]}) than features ({X.shape[1]})"
        )
    design = np.hstack([X, np.ones((X.shape[0], 1))])
    gram = design.T @ design
    rhs = design.T @ y
    try:
        beta = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(beta)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        beta = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)
    return beta


def predict_linear(beta: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ beta[:-1] + beta[-1]


@dataclass
class RvDataset:
    dates: pd.DatetimeIndex        # formation month ends
    features: np.ndarray           # (n, 41) raw market blocks
    targets: np.ndarray            # next-month realized volatility
    target_day_counts: np.ndarray  # trading days behind each target


def build_rv_samples(panel: PricePanel) -> RvDataset:
    """One sample per formation month with both features and a next-month target."""
    dates, feats, targets, counts = [], [], [], []
    months = list(panel.months())
    for i, (month, formation) in enumerate(zip(months, panel.month_ends())):
        if i + 1 >= len(months):
            break
        try:
            x = market_features(panel, formation)
            rv, n_days = realized_volatility_detail(panel, months[i + 1])
        except FeatureUnavailable:
            continue
        dates.append(formation)
        feats.append(x)
        targets.append(rv)
        counts.append(n_days)
    if not feats:
        raise ConfigError("panel too short to build any volatility samples")
    return RvDataset(pd.DatetimeIndex(dates), np.vstack(feats),
                     np.array(targets), np.array(counts))


@dataclass
class RvSettings:
    train_months: int = 120
    test_months: int = 36
    val_fraction: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0


@dataclass
class RvReport:
    results: dict[str, dict]      # model -> {in_sample_r2, out_sample_r2}
    split_hash: str
    n_train: int
    n_test: int
    target_day_counts: dict

    def to_dict(self) -> dict:
        return {"schema_version": 1, "split_hash": self.split_hash,
                "n_train": self.n_train, "n_test": self.n_test,
                "target_day_counts": self.target_day_counts,
                "results": {k: self.results[k] for k in MODEL_ORDER}}


def _nn_arch(name: str) -> dict:
    if name.startswith("ann"):
        return {"kind": "ann", "in_dim": N_MARKET_FEATURES,
                "width": N_MARKET_FEATURES, "hidden_layers": int(name[-1]),
                "task": "regression"}
    blocks = int(name[-1]) // 2
    return {"kind": "attention_resnet", "width": N_MARKET_FEATURES,
            "n_blocks": blocks, "attention_blocks": [], "task": "regression"}


def run_rv_experiment(panel: PricePanel, settings: RvSettings) -> RvReport:
    """Fit all benchmark models on one chronological split and report R^2."""
    settings.train.validate()
    data = build_rv_samples(panel)
    n = len(data.dates)
    if n < settings.train_months + 2:
        raise ConfigError(
            f"only {n} volatility samples; need train_months={settings.train_months} + test"
        )
    n_train = settings.train_months
    n_test = min(settings.test_months, n - n_train)
    train_idx = np.arange(n_train)
    test_idx = np.arange(n_train, n_train + n_test)

    split_hash = hashlib.sha256(
        ("|".join(d.strftime("%Y-%m-%d") for d in data.dates[:n_train + n_test])
         + f"#train={n_train}").encode()).hexdigest()[:16]

    y_train = data.targets[train_idx]
    y_test = data.targets[test_idx]
    train_mean = float(y_train.mean())
    results: dict[str, dict] = {}

    def score(name: str, pred_train, pred_test, in_targets=None) -> None:
        in_t = y_train if in_targets is None else in_targets
        results[name] = {
            "in_sample_r2": r_squared(pred_train, in_t, float(in_t.mean())),
            "out_sample_r2": r_squared(pred_test, y_test, train_mean),
        }

    # persistence: in-sample over the train span (first point has no lag),
    # out-of-sample chained across the boundary so every test month is scored
    score("persistence",
          persistence_predictions(y_train), data.targets[test_idx - 1],
          in_targets=y_train[1:])

    # linear regression on z-scored features
    mean, std = fit_zscore(data.features[train_idx])
    X_train = apply_zscore(data.features[train_idx], mean, std)
    X_test = apply_zscore(data.features[test_idx], mean, std)
    beta = fit_linear(X_train, y_train)
    score("linear", predict_linear(beta, X_train), predict_linear(beta, X_test))

    # neural models: standardized target, chronological validation tail
    t_mean, t_std = float(y_train.mean()), float(y_train.std())
    if t_std == 0.0:
        raise UndefinedMetricError("degenerate constant realized-volatility target")
    z_train = (y_train - t_mean) / t_std
    n_val = max(1, int(round(settings.val_fraction * n_train)))
    fit_sl, val_sl = slice(0, n_train - n_val), slice(n_train - n_val, n_train)

    for name in MODEL_ORDER[2:]:
        ss = np.random.SeedSequence(entropy=settings.seed,
                                    spawn_key=(MODEL_ORDER.index(name),))
        init_seed, train_seed = (int(s) for s in ss.generate_state(2, np.uint64))
        cfg = TrainConfig(**{**vars(settings.train), "seed": train_seed})
        model = build_model(_nn_arch(name), np.random.default_rng(init_seed),
                            slope=cfg.leaky_slope, dropout=cfg.dropout_rate)
        train_model(model,
                    (X_train[fit_sl], None, z_train[fit_sl]),
                    (X_train[val_sl], None, z_train[val_sl]), cfg)
        pred_train = model.predict(X_train) * t_std + t_mean
        pred_test = model.predict(X_test) * t_std + t_mean
        score(name, pred_train, pred_test)

    counts = {str(k): int(v) for k, v in
              zip(data.dates[np.concatenate([train_idx, test_idx])].strftime("%Y-%m"),
                  data.target_day_counts[np.concatenate([train_idx, test_idx])])}
    logger.info("rv experiment: split %s, out-of-sample R^2 %s", split_hash,
                {k: round(v["out_sample_r2"], 3) for k, v in results.items()})
    return RvReport(results=results, split_hash=split_hash,
                    n_train=n_train, n_test=n_test, target_day_counts=counts)
