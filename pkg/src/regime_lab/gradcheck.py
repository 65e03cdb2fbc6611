"""Central finite-difference verification of the analytic gradients.

Models are checked in training mode (batch-statistics batch norm) with
dropout and input noise disabled so the objective is a deterministic
function of the parameters. The same objective feeds both the analytic
backward pass and the numeric differencing, so any wiring error in a
backward method shows up as a relative-error spike.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .blocks import build_model
from .training import backward_into_grads, model_loss

FD_STEP = 1e-5
REL_TOL = 1e-4


def flatten_values(params) -> np.ndarray:
    return np.concatenate([p.value.ravel() for p in params])


def flatten_grads(params) -> np.ndarray:
    return np.concatenate([p.grad.ravel() for p in params])


def assign_values(params, flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        size = p.value.size
        p.value = flat[offset:offset + size].reshape(p.value.shape).copy()
        offset += size


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_model_gradients(model, X, y, Xs=None, lam: float = 0.01,
                          h: float = FD_STEP) -> float:
    """Max relative error between analytic and central-difference gradients."""
    params = model.params()
    model.zero_grad()
    scores = model.forward_scores(X, Xs, training=True, rng=None)
    backward_into_grads(model, scores, y, lam)
    analytic = flatten_grads(params)

    theta = flatten_values(params)
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            bumped = theta.copy()
            bumped[i] += sign * h
            assign_values(params, bumped)
            loss = model_loss(model, X, y, Xs, lam, training=True)
            if slot == 0:
                up = loss
            else:
                down = loss
        numeric[i] = (up - down) / (2.0 * h)
    assign_values(params, theta)
    return max_relative_error(analytic, numeric)


@dataclass
class GradCheckReport:
    name: str
    n_params: int
    seeds: int
    max_rel_error: float
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOL


# Small pinned shapes: every block type is exercised, finite differences stay fast.
STANDARD_ARCHS: dict[str, dict] = {
    "plain_ann": {"kind": "ann", "in_dim": 8, "width": 8, "hidden_layers": 2},
    "attention_block": {"kind": "attention_resnet", "width": 8, "n_blocks": 1,
                        "attention_blocks": [0], "attention_hidden": 6},
    "attention_resnet": {"kind": "attention_resnet", "width": 8, "n_blocks": 3,
                         "attention_blocks": [0, 2], "attention_hidden": 6},
    "switching_resnet": {"kind": "switching_resnet", "main_width": 8,
                         "main_blocks": 1, "switch_width": 10, "switch_blocks": 1},
}


def run_standard_suite(seeds: int = 20, batch: int = 4,
                       lam: float = 0.01) -> list[GradCheckReport]:
    """Gradient-check every standard architecture over many random seeds."""
    reports = []
    for arch_index, (name, arch) in enumerate(STANDARD_ARCHS.items()):
        worst = 0.0
        n_params = 0
        t0 = time.perf_counter()
        for seed in range(seeds):
            rng = np.random.default_rng(np.random.SeedSequence((arch_index, seed)))
            model = build_model(arch, rng, slope=0.01, dropout=0.0)
            n_params = int(sum(p.value.size for p in model.params()))
            X = rng.normal(size=(batch, arch.get("in_dim", arch.get("width", arch.get("main_width", 8)))))
            Xs = None
            if arch["kind"] == "switching_resnet":
                Xs = rng.normal(size=(batch, arch["switch_width"]))
            y = rng.integers(0, 2, size=batch).astype(np.float64)
            err = check_model_gradients(model, X, y, Xs, lam=lam)
            worst = max(worst, err)
        reports.append(GradCheckReport(name=name, n_params=n_params, seeds=seeds,
                                       max_rel_error=worst,
                                       elapsed_s=time.perf_counter() - t0))
    return reports
