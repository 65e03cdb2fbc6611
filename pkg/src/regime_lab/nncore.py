"""Dense-network numerics from scratch: layers, activations, losses, Adam.

Everything runs in float64 on plain numpy arrays (batch x features,
row-major). Each layer caches what its backward pass needs; gradients
accumulate into per-parameter buffers so a training step is
zero_grad -> forward -> backward -> optimizer step. All randomness is
drawn from an explicit numpy Generator, so identical seeds give
bit-identical runs.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBatchError, ShapeError, StateError

PROB_EPS = 1e-12  # probability clamp applied before logs


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class Param:
    """Named parameter array with an accumulated gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Param({self.name}, shape={self.value.shape})"


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise max(x, slope*x) for slope in (0, 1)."""
    return np.where(x >= 0.0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, slope)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # clip keeps exp finite; saturation error is far below float64 eps
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward through row-wise softmax given its output."""
    return out * (g - np.sum(g * out, axis=-1, keepdims=True))


def gaussian_noise(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Additive iid N(0, std^2) noise; std=0 returns the input unchanged."""
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    if std == 0.0:
        return x
    return x + rng.normal(0.0, std, size=x.shape)


class Dense:
    """Affine layer y = x @ W.T + b with W of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, name: str,
                 rng: np.random.Generator | None = None):
        if rng is None:
            w = np.zeros((out_dim, in_dim))
        else:
            # He-style init scaled for leaky-ReLU stacks
            w = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(out_dim, in_dim))
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(out_dim))
        self.name = name
        self._x: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.value.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"{self.name}: input shape {x.shape} incompatible with "
                f"weight shape {self.weight.value.shape}"
            )
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError(f"{self.name}: backward called before forward")
        self.weight.grad += g.T @ self._x
        self.bias.grad += g.sum(axis=0)
        return g @ self.weight.value

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


class BatchNorm:
    """Batch normalization with running statistics for inference.

    Training mode normalizes by per-batch population statistics and blends
    them into the running buffers (running = momentum*running + (1-m)*batch);
    inference mode uses the running buffers only.
    """

    def __init__(self, dim: int, name: str, momentum: float = 0.99,
                 epsilon: float = 1e-8):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0,1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.epsilon = epsilon
        self.name = name
        self._cache = None

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if x.shape[1] != self.gamma.value.shape[0]:
            raise ShapeError(
                f"{self.name}: input width {x.shape[1]} != state width "
                f"{self.gamma.value.shape[0]}"
            )
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    f"{self.name}: training batch needs >= 2 rows, got {x.shape[0]}"
                )
            mu = x.mean(axis=0)
            var = x.var(axis=0)  # population convention
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mu = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mu) * inv_std
        self._cache = (x, mu, inv_std, xhat, training)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        x, mu, inv_std, xhat, training = self._cache
        self.gamma.grad += (g * xhat).sum(axis=0)
        self.beta.grad += g.sum(axis=0)
        gx = g * self.gamma.value
        if not training:
            return gx * inv_std
        n = x.shape[0]
        dvar = np.sum(gx * (x - mu), axis=0) * (-0.5) * inv_std ** 3
        dmu = -np.sum(gx, axis=0) * inv_std + dvar * (-2.0 / n) * np.sum(x - mu, axis=0)
        return gx * inv_std + dvar * 2.0 * (x - mu) / n + dmu / n

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_buffers(self, state: dict[str, np.ndarray]) -> None:
        self.running_mean = state[f"{self.name}.running_mean"].copy()
        self.running_var = state[f"{self.name}.running_var"].copy()


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-rate), inference is identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.last_mask: np.ndarray | None = None
        self._scale = 1.0

    def forward(self, x: np.ndarray, training: bool,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if not training or self.rate == 0.0:
            self.last_mask = None
            return x
        if rng is None:
            raise StateError("dropout in training mode requires an rng")
        self.last_mask = rng.random(x.shape) >= self.rate
        self._scale = 1.0 / (1.0 - self.rate)
        return x * self.last_mask * self._scale

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self.last_mask is None:
            return g
        return g * self.last_mask * self._scale


def bce_loss(probs: np.ndarray, labels: np.ndarray,
             weights: tuple[np.ndarray, ...] = (), lam: float = 0.0) -> float:
    """Mean binary cross-entropy plus lam * sum of squared Frobenius norms.

    Probabilities are clamped to [PROB_EPS, 1-PROB_EPS] before the logs so
    the loss is finite for any input in [0, 1]. The regularization term
    covers weight matrices only; callers must not pass biases or batch-norm
    parameters.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs shape {probs.shape} != labels shape {labels.shape}")
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    data = -np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    reg = lam * sum(float(np.sum(w * w)) for w in weights)
    return float(data + reg)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


class Adam:
    """Adam with bias correction over an ordered parameter list."""

    def __init__(self, params: list[Param], beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first_moment = [np.zeros_like(p.value) for p in params]
        self.second_moment = [np.zeros_like(p.value) for p in params]
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            if g.shape != p.value.shape:
                raise ShapeError(
                    f"{p.name}: grad shape {g.shape} != param shape {p.value.shape}"
                )
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"adam.step_count": np.array([self.step_count])}
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            out[f"adam.m.{p.name}"] = m
            out[f"adam.v.{p.name}"] = v
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["adam.step_count"][0])
        for i, p in enumerate(self.params):
            self.first_moment[i] = state[f"adam.m.{p.name}"].copy()
            self.second_moment[i] = state[f"adam.v.{p.name}"].copy()
