"""Finite-difference verification of every backward pass."""

import numpy as np
import pytest

from regime_lab.blocks import AttentionModule, ResidualBlock, build_model
from regime_lab.errors import StateError
from regime_lab.gradcheck import (
    REL_TOL,
    check_model_gradients,
    flatten_grads,
    flatten_values,
    max_relative_error,
    run_standard_suite,
)
from regime_lab.nncore import Dense, Dropout, softmax_rows, softmax_rows_grad
from regime_lab.training import backward_into_grads


def numeric_gradient(loss_fn, params, h=1e-5):
    theta = flatten_values(params)
    grad = np.empty_like(theta)
    from regime_lab.gradcheck import assign_values
    for i in range(theta.size):
        up = theta.copy(); up[i] += h
        assign_values(params, up)
        lp = loss_fn()
        down = theta.copy(); down[i] -= h
        assign_values(params, down)
        lm = loss_fn()
        grad[i] = (lp - lm) / (2 * h)
    assign_values(params, theta)
    return grad


class TestBlockGradients:
    def test_residual_block_training_mode(self):
        rng = np.random.default_rng(0)
        block = ResidualBlock(5, "blk", rng, slope=0.01, dropout=0.0)
        x = rng.normal(size=(4, 5))
        target = rng.normal(size=(4, 5))

        def loss_fn():
            out = block.forward(x, training=True)
            return float(np.mean((out - target) ** 2))

        params = block.params()
        for p in params:
            p.zero_grad()
        out = block.forward(x, training=True)
        block.backward(2.0 * (out - target) / out.size)
        analytic = flatten_grads(params)
        numeric = numeric_gradient(loss_fn, params)
        assert max_relative_error(analytic, numeric) < REL_TOL

    def test_attention_module(self):
        rng = np.random.default_rng(1)
        att = AttentionModule(5, 4, 5, "att", rng)
        x = rng.normal(size=(3, 5))
        target = rng.normal(size=(3, 5))

        def loss_fn():
            return float(np.mean((att.forward(x) - target) ** 2))

        params = att.params()
        for p in params:
            p.zero_grad()
        mask = att.forward(x)
        att.backward(2.0 * (mask - target) / mask.size)
        analytic = flatten_grads(params)
        numeric = numeric_gradient(loss_fn, params)
        assert max_relative_error(analytic, numeric) < REL_TOL

    def test_dropout_with_frozen_mask(self):
        # the mask is redrawn from the same seed every evaluation, so the
        # loss is deterministic and the dropout backward is checkable
        rng = np.random.default_rng(2)
        dense = Dense(4, 4, "d", rng)
        drop = Dropout(0.4)
        x = rng.normal(size=(6, 4))

        def loss_fn():
            out = drop.forward(dense.forward(x), True, np.random.default_rng(99))
            return float(np.mean(out ** 2))

        params = dense.params()
        for p in params:
            p.zero_grad()
        out = drop.forward(dense.forward(x), True, np.random.default_rng(99))
        dense.backward(drop.backward(2.0 * out / out.size))
        analytic = flatten_grads(params)
        numeric = numeric_gradient(loss_fn, params)
        assert max_relative_error(analytic, numeric) < REL_TOL

    def test_softmax_rows_grad_identity(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(3, 6))
        g = rng.normal(size=(3, 6))
        y = softmax_rows(z)
        analytic = softmax_rows_grad(y, g)
        h = 1e-6
        numeric = np.empty_like(z)
        for i in range(3):
            for j in range(6):
                zp = z.copy(); zp[i, j] += h
                zm = z.copy(); zm[i, j] -= h
                numeric[i, j] = np.sum(g * (softmax_rows(zp) - softmax_rows(zm))) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)


class TestModelGradients:
    def test_linear_sum_of_params(self):
        # scores = sum(w_i * 1) + b, loss gradient of the raw score is 1
        model = build_model({"kind": "linear", "in_dim": 3, "task": "regression"})
        X = np.ones((1, 3))
        model.zero_grad()
        scores = model.forward_scores(X)
        model.backward_from_scores(np.ones(1))
        np.testing.assert_allclose(flatten_grads(model.params()), 1.0)

    def test_zero_input_zero_bias_first_layer_grad_is_zero(self):
        rng = np.random.default_rng(4)
        model = build_model({"kind": "ann", "in_dim": 4, "width": 4,
                             "hidden_layers": 1}, rng)
        X = np.zeros((4, 4))
        y = np.ones(4)
        model.zero_grad()
        scores = model.forward_scores(X, training=False)
        backward_into_grads(model, scores, y)
        np.testing.assert_allclose(model.layers[0].weight.grad, 0.0, atol=1e-15)

    def test_backward_without_forward_raises(self):
        model = build_model({"kind": "linear", "in_dim": 2})
        with pytest.raises(StateError):
            model.backward_from_scores(np.ones(1))

    @pytest.mark.parametrize("arch", [
        {"kind": "linear", "in_dim": 6},
        {"kind": "ann", "in_dim": 6, "width": 7, "hidden_layers": 2},
        {"kind": "attention_resnet", "width": 6, "n_blocks": 2,
         "attention_blocks": [1], "attention_hidden": 5},
        {"kind": "switching_resnet", "main_width": 6, "main_blocks": 1,
         "switch_width": 9, "switch_blocks": 1},
        {"kind": "attention_resnet", "width": 6, "n_blocks": 1,
         "attention_blocks": [], "task": "regression"},
    ])
    def test_finite_differences(self, arch):
        rng = np.random.default_rng(5)
        model = build_model(arch, rng, dropout=0.0)
        in_dim = arch.get("in_dim", arch.get("width", arch.get("main_width")))
        X = rng.normal(size=(4, in_dim))
        Xs = rng.normal(size=(4, arch["switch_width"])) \
            if arch["kind"] == "switching_resnet" else None
        if arch.get("task") == "regression":
            y = rng.normal(size=4)
        else:
            y = rng.integers(0, 2, size=4).astype(float)
        assert check_model_gradients(model, X, y, Xs, lam=0.01) < REL_TOL


def test_standard_suite_quick():
    reports = run_standard_suite(seeds=2)
    assert len(reports) == 4
    assert all(r.passed for r in reports), [(r.name, r.max_rel_error) for r in reports]
