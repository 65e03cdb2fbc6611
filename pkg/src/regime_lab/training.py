"""Mini-batch training: Adam, per-epoch lr decay, per-step penalty decay.

The schedule follows the published recipe: Gaussian noise on the input
tensors, inverted dropout inside the model, an L2 penalty on dense weight
matrices whose coefficient decays multiplicatively every optimizer step,
learning rate decaying per epoch, and periodic validation that keeps the
best-validation parameter snapshot. Identical seeds give bit-identical
final states on identical data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nncore import Adam, bce_loss, gaussian_noise, mse_loss, sigmoid

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Knobs for one training run; defaults mirror the published recipe."""

    batch_size: int = 512
    lr_init: float = 1e-3
    lr_decay: float = 0.995        # multiplied into lr once per epoch
    lambda_init: float = 50.0
    lambda_decay: float = 0.999    # multiplied into lambda once per step
    dropout_rate: float = 0.5
    noise_std: float = 0.1
    leaky_slope: float = 0.01
    epochs: int = 5
    seed: int = 0
    validate_every: int = 200      # steps between validation snapshots
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std must be >= 0")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must be in (0, 1)")
        for name in ("lr_init", "lr_decay", "lambda_decay"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0")
        if self.lambda_init < 0.0:
            raise ConfigError("lambda_init must be >= 0")
        if self.epochs < 1 or self.validate_every < 1:
            raise ConfigError("epochs and validate_every must be >= 1")


@dataclass
class TrainResult:
    steps: int
    best_val_metric: float | None
    final_train_loss: float
    history: list[tuple[int, float]] = field(default_factory=list)


def regularization_term(model, lam: float) -> float:
    """lam * sum of squared Frobenius norms over dense weights only."""
    if lam == 0.0:
        return 0.0
    return lam * sum(float(np.sum(w.value * w.value))
                     for w in model.weight_matrices())


def model_loss(model, X: np.ndarray, y: np.ndarray,
               Xs: np.ndarray | None = None, lam: float = 0.0,
               training: bool = False,
               rng: np.random.Generator | None = None) -> float:
    """Full training objective: data loss plus weight penalty."""
    scores = model.forward_scores(X, Xs, training=training, rng=rng)
    if model.task == "binary":
        data = bce_loss(sigmoid(scores), y)
    else:
        data = mse_loss(scores, y)
    return data + regularization_term(model, lam)


def backward_into_grads(model, scores: np.ndarray, y: np.ndarray,
                        lam: float = 0.0) -> None:
    """Accumulate d(objective)/d(params) for the most recent forward pass."""
    n = y.shape[0]
    if model.task == "binary":
        dscore = (sigmoid(scores) - y) / n
    else:
        dscore = 2.0 * (scores - y) / n
    model.backward_from_scores(dscore)
    if lam != 0.0:
        for w in model.weight_matrices():
            w.grad += 2.0 * lam * w.value


def evaluate_metric(model, X: np.ndarray, y: np.ndarray,
                    Xs: np.ndarray | None = None) -> float:
    """Unregularized eval-mode metric: mean BCE or MSE."""
    pred = model.predict(X, Xs)
    if model.task == "binary":
        return bce_loss(pred, y)
    return mse_loss(pred, y)


def train_model(model, train: tuple, val: tuple | None,
                cfg: TrainConfig) -> TrainResult:
    """Train in place; restores the best-validation snapshot before returning.

    `train` and `val` are (X, Xs, y) triples with Xs None for models that do
    not consume market features. Validation runs every `validate_every`
    steps and once more at the end, so the final state always competes.
    """
    cfg.validate()
    X, Xs, y = train
    n = X.shape[0]
    if n < 2:
        raise ConfigError(f"training set needs >= 2 rows, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    optimizer = Adam(model.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)

    lam = cfg.lambda_init
    step = 0
    best_metric: float | None = None
    best_state = None
    history: list[tuple[int, float]] = []

    def validate_now() -> None:
        nonlocal best_metric, best_state
        if val is None:
            return
        metric = evaluate_metric(model, val[0], val[2], val[1])
        history.append((step, metric))
        if best_metric is None or metric < best_metric:
            best_metric = metric
            best_state = model.named_state()

    last_loss = model_loss(model, X, y, Xs, lam)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_init * cfg.lr_decay ** epoch
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.shape[0] < 2:
                continue  # batch statistics undefined on a single row
            Xb = gaussian_noise(X[idx], cfg.noise_std, rng)
            Xsb = None
            if Xs is not None:
                Xsb = gaussian_noise(Xs[idx], cfg.noise_std, rng)
            yb = y[idx]
            model.zero_grad()
            scores = model.forward_scores(Xb, Xsb, training=True, rng=rng)
            backward_into_grads(model, scores, yb, lam)
            optimizer.step(lr)
            lam *= cfg.lambda_decay
            step += 1
            if step % cfg.validate_every == 0:
                validate_now()

    validate_now()
    if best_state is not None:
        model.load_state(best_state)
    last_loss = model_loss(model, X, y, Xs, lam)
    logger.debug("trained %s: %d steps, best val %.6f, final train loss %.6f",
                 model.arch.get("kind"), step,
                 best_metric if best_metric is not None else float("nan"), last_loss)
    return TrainResult(steps=step, best_val_metric=best_metric,
                       final_train_loss=last_loss, history=history)
