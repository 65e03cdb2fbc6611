"""Network architectures assembled from nncore primitives.

Four model families share one interface: a residual stack gated by
self-attention masks, the same stack gated by a market-condition switching
module, a plain deep ANN, and a logistic/linear single layer. Binary models
return logits from `forward_scores`; regression models return predictions
directly. `backward_from_scores` propagates d(loss)/d(score) into parameter
gradients, so trainers never need to know the wiring.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .nncore import (
    BatchNorm,
    Dense,
    Dropout,
    Param,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
    softmax_rows,
    softmax_rows_grad,
)


class ResidualBlock:
    """Two affine+BN+activation layers with an identity shortcut.

    Layer order is affine -> batch norm -> activation, the shortcut joins
    before the final activation, and inverted dropout follows each
    activation. Both layers are square so the shortcut is well-typed.
    """

    def __init__(self, width: int, name: str, rng: np.random.Generator | None,
                 slope: float = 0.01, dropout: float = 0.0,
                 bn_momentum: float = 0.99):
        self.width = width
        self.slope = slope
        self.dense1 = Dense(width, width, f"{name}.dense1", rng)
        self.norm1 = BatchNorm(width, f"{name}.norm1", momentum=bn_momentum)
        self.dense2 = Dense(width, width, f"{name}.dense2", rng)
        self.norm2 = BatchNorm(width, f"{name}.norm2", momentum=bn_momentum)
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if x.shape[1] != self.width:
            raise ShapeError(
                f"residual block width {self.width} got input shape {x.shape}"
            )
        b1 = self.norm1.forward(self.dense1.forward(x), training)
        h1 = self.drop1.forward(leaky_relu(b1, self.slope), training, rng)
        b2 = self.norm2.forward(self.dense2.forward(h1), training)
        s = b2 + x
        out = self.drop2.forward(leaky_relu(s, self.slope), training, rng)
        self._cache = (b1, s)
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        b1, s = self._cache
        gs = self.drop2.backward(g) * leaky_relu_grad(s, self.slope)
        g_z2 = self.norm2.backward(gs)
        g_h1 = self.dense2.backward(g_z2)
        g_b1 = self.drop1.backward(g_h1) * leaky_relu_grad(b1, self.slope)
        g_in = self.dense1.backward(self.norm1.backward(g_b1))
        return g_in + gs  # shortcut adds the post-norm gradient directly

    def params(self) -> list[Param]:
        return (self.dense1.params() + self.norm1.params()
                + self.dense2.params() + self.norm2.params())

    def weight_matrices(self) -> list[Param]:
        return [self.dense1.weight, self.dense2.weight]

    def buffers(self) -> dict[str, np.ndarray]:
        return {**self.norm1.buffers(), **self.norm2.buffers()}

    def load_buffers(self, state: dict[str, np.ndarray]) -> None:
        self.norm1.load_buffers(state)
        self.norm2.load_buffers(state)


class AttentionModule:
    """Two dense layers producing a softmax mask from a block's input.

    mask = softmax(W2 @ leaky_relu(W1 @ x + b1) + b2); rows are strictly
    positive and sum to 1. No batch norm or dropout inside the module.
    """

    def __init__(self, in_dim: int, hidden_dim: int, mask_dim: int, name: str,
                 rng: np.random.Generator | None, slope: float = 0.01):
        self.slope = slope
        self.dense1 = Dense(in_dim, hidden_dim, f"{name}.dense1", rng)
        self.dense2 = Dense(hidden_dim, mask_dim, f"{name}.dense2", rng)
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        za = self.dense1.forward(x)
        zb = self.dense2.forward(leaky_relu(za, self.slope))
        mask = softmax_rows(zb)
        self._cache = (za, mask)
        return mask

    def backward(self, g: np.ndarray) -> np.ndarray:
        za, mask = self._cache
        g = self.dense2.backward(softmax_rows_grad(mask, g))
        return self.dense1.backward(g * leaky_relu_grad(za, self.slope))

    def params(self) -> list[Param]:
        return self.dense1.params() + self.dense2.params()

    def weight_matrices(self) -> list[Param]:
        return [self.dense1.weight, self.dense2.weight]


class _ModelBase:
    """Shared plumbing: parameter access, state snapshots, prediction."""

    task = "binary"
    needs_market_features = False
    arch: dict

    def params(self) -> list[Param]:
        raise NotImplementedError

    def weight_matrices(self) -> list[Param]:
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, state: dict[str, np.ndarray]) -> None:
        pass

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def named_state(self) -> dict[str, np.ndarray]:
        state = {p.name: p.value.copy() for p in self.params()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            incoming = state[p.name]
            if incoming.shape != p.value.shape:
                raise ShapeError(
                    f"{p.name}: snapshot shape {incoming.shape} != {p.value.shape}"
                )
            p.value = incoming.copy()
        self.load_buffers(state)

    def forward_scores(self, X: np.ndarray, Xs: np.ndarray | None = None,
                       training: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward_from_scores(self, dscore: np.ndarray) -> None:
        raise NotImplementedError

    def predict(self, X: np.ndarray, Xs: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode prediction: probabilities for binary, values for regression."""
        scores = self.forward_scores(X, Xs, training=False)
        if self.task == "binary":
            return sigmoid(scores)
        return scores


class LinearModel(_ModelBase):
    """Single affine layer; with a sigmoid head this is logistic regression."""

    def __init__(self, in_dim: int, rng: np.random.Generator | None = None,
                 task: str = "binary"):
        self.task = task
        self.head = Dense(in_dim, 1, "head", rng)
        self.arch = {"kind": "linear", "in_dim": in_dim, "task": task}

    def forward_scores(self, X, Xs=None, training=False, rng=None):
        return self.head.forward(X)[:, 0]

    def backward_from_scores(self, dscore):
        self.head.backward(dscore[:, None])

    def params(self):
        return self.head.params()

    def weight_matrices(self):
        return [self.head.weight]


class PlainANN(_ModelBase):
    """Deep plain network: per hidden layer affine -> BN -> activation -> dropout."""

    def __init__(self, in_dim: int, width: int, hidden_layers: int,
                 rng: np.random.Generator | None = None, slope: float = 0.01,
                 dropout: float = 0.0, bn_momentum: float = 0.99,
                 task: str = "binary"):
        if hidden_layers < 1:
            raise ConfigError("PlainANN needs >= 1 hidden layer; use LinearModel")
        self.task = task
        self.slope = slope
        self.layers: list[Dense] = []
        self.norms: list[BatchNorm] = []
        self.drops: list[Dropout] = []
        for i in range(hidden_layers):
            d_in = in_dim if i == 0 else width
            self.layers.append(Dense(d_in, width, f"hidden{i}.dense", rng))
            self.norms.append(BatchNorm(width, f"hidden{i}.norm", momentum=bn_momentum))
            self.drops.append(Dropout(dropout))
        self.head = Dense(width, 1, "head", rng)
        self._cache: list[np.ndarray] = []
        self.arch = {"kind": "ann", "in_dim": in_dim, "width": width,
                     "hidden_layers": hidden_layers, "task": task}

    def forward_scores(self, X, Xs=None, training=False, rng=None):
        h = X
        self._cache = []
        for dense, norm, drop in zip(self.layers, self.norms, self.drops):
            b = norm.forward(dense.forward(h), training)
            self._cache.append(b)
            h = drop.forward(leaky_relu(b, self.slope), training, rng)
        return self.head.forward(h)[:, 0]

    def backward_from_scores(self, dscore):
        g = self.head.backward(dscore[:, None])
        for dense, norm, drop, b in zip(reversed(self.layers), reversed(self.norms),
                                        reversed(self.drops), reversed(self._cache)):
            g = drop.backward(g) * leaky_relu_grad(b, self.slope)
            g = dense.backward(norm.backward(g))
        return g

    def params(self):
        out: list[Param] = []
        for dense, norm in zip(self.layers, self.norms):
            out += dense.params() + norm.params()
        return out + self.head.params()

    def weight_matrices(self):
        return [d.weight for d in self.layers] + [self.head.weight]

    def buffers(self):
        out: dict[str, np.ndarray] = {}
        for norm in self.norms:
            out.update(norm.buffers())
        return out

    def load_buffers(self, state):
        for norm in self.norms:
            norm.load_buffers(state)


class AttentionResNet(_ModelBase):
    """Residual stack with self-attention masks on selected blocks.

    Each attached block's mask is computed from the block input and applied
    to the block output (after activation) by element-wise product. With an
    empty attachment set this is a plain residual network, which is also the
    regression backbone for the volatility experiment.
    """

    def __init__(self, width: int, n_blocks: int,
                 attention_blocks: tuple[int, ...] = (),
                 attention_hidden: int | None = None,
                 rng: np.random.Generator | None = None, slope: float = 0.01,
                 dropout: float = 0.0, bn_momentum: float = 0.99,
                 task: str = "binary"):
        bad = [i for i in attention_blocks if not 0 <= i < n_blocks]
        if bad:
            raise ConfigError(f"attention block indices out of range: {bad}")
        self.width = width
        self.slope = slope
        self.blocks = [
            ResidualBlock(width, f"block{i}", rng, slope, dropout, bn_momentum)
            for i in range(n_blocks)
        ]
        hidden = attention_hidden if attention_hidden is not None else width
        self.attention = {
            i: AttentionModule(width, hidden, width, f"attn{i}", rng, slope)
            for i in sorted(attention_blocks)
        }
        self.head = Dense(width, 1, "head", rng)
        self.task = task
        self._gates: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.arch = {"kind": "attention_resnet", "width": width,
                     "n_blocks": n_blocks,
                     "attention_blocks": sorted(attention_blocks),
                     "attention_hidden": hidden, "task": task}

    def forward_scores(self, X, Xs=None, training=False, rng=None):
        if X.shape[1] != self.width:
            raise ShapeError(f"expected {self.width}-wide input, got {X.shape}")
        h = X
        self._gates = {}
        for i, block in enumerate(self.blocks):
            block_in = h
            h = block.forward(block_in, training, rng)
            if i in self.attention:
                mask = self.attention[i].forward(block_in, training)
                self._gates[i] = (h, mask)
                h = h * mask
        return self.head.forward(h)[:, 0]

    def backward_from_scores(self, dscore):
        g = self.head.backward(dscore[:, None])
        for i in reversed(range(len(self.blocks))):
            if i in self.attention:
                block_out, mask = self._gates[i]
                g_block = self.blocks[i].backward(g * mask)
                g = g_block + self.attention[i].backward(g * block_out)
            else:
                g = self.blocks[i].backward(g)
        return g

    def params(self):
        out: list[Param] = []
        for block in self.blocks:
            out += block.params()
        for i in sorted(self.attention):
            out += self.attention[i].params()
        return out + self.head.params()

    def weight_matrices(self):
        out = [w for block in self.blocks for w in block.weight_matrices()]
        out += [w for i in sorted(self.attention)
                for w in self.attention[i].weight_matrices()]
        return out + [self.head.weight]

    def buffers(self):
        out: dict[str, np.ndarray] = {}
        for block in self.blocks:
            out.update(block.buffers())
        return out

    def load_buffers(self, state):
        for block in self.blocks:
            block.load_buffers(state)


class SwitchingResNet(_ModelBase):
    """Residual main stack gated by a conditional mask from a switching stack.

    The switching stack reads market-condition features, projects to the
    main width, and normalizes with a softmax; the mask multiplies the main
    stack's last hidden layer element-wise before the output head. Both
    stacks train jointly from a single loss.
    """

    needs_market_features = True

    def __init__(self, main_width: int, main_blocks: int, switch_width: int,
                 switch_blocks: int, rng: np.random.Generator | None = None,
                 slope: float = 0.01, dropout: float = 0.0,
                 bn_momentum: float = 0.99, task: str = "binary"):
        self.main_width = main_width
        self.switch_width = switch_width
        self.main = [
            ResidualBlock(main_width, f"main.block{i}", rng, slope, dropout, bn_momentum)
            for i in range(main_blocks)
        ]
        self.switch = [
            ResidualBlock(switch_width, f"switch.block{i}", rng, slope, dropout, bn_momentum)
            for i in range(switch_blocks)
        ]
        self.mask_proj = Dense(switch_width, main_width, "switch.mask_proj", rng)
        self.head = Dense(main_width, 1, "head", rng)
        self.task = task
        self._cache = None
        self.arch = {"kind": "switching_resnet", "main_width": main_width,
                     "main_blocks": main_blocks, "switch_width": switch_width,
                     "switch_blocks": switch_blocks, "task": task}

    def conditional_mask(self, Xs: np.ndarray, training: bool = False,
                         rng: np.random.Generator | None = None) -> np.ndarray:
        """Mask rows (strictly positive, summing to 1) for market feature rows."""
        if Xs.shape[1] != self.switch_width:
            raise ShapeError(
                f"expected {self.switch_width}-wide market features, got {Xs.shape}"
            )
        s = Xs
        for block in self.switch:
            s = block.forward(s, training, rng)
        mask = softmax_rows(self.mask_proj.forward(s))
        self._mask_cache = mask
        return mask

    def forward_scores(self, X, Xs=None, training=False, rng=None):
        if Xs is None:
            raise ShapeError("switching network requires market features Xs")
        if X.shape[0] != Xs.shape[0]:
            raise ShapeError(
                f"row mismatch: stock features {X.shape[0]} rows, "
                f"market features {Xs.shape[0]} rows"
            )
        if X.shape[1] != self.main_width:
            raise ShapeError(f"expected {self.main_width}-wide input, got {X.shape}")
        h = X
        for block in self.main:
            h = block.forward(h, training, rng)
        mask = self.conditional_mask(Xs, training, rng)
        self._cache = (h, mask)
        return self.head.forward(h * mask)[:, 0]

    def backward_from_scores(self, dscore):
        h, mask = self._cache
        g = self.head.backward(dscore[:, None])
        g_switch = self.mask_proj.backward(softmax_rows_grad(mask, g * h))
        for block in reversed(self.switch):
            g_switch = block.backward(g_switch)
        g_main = g * mask
        for block in reversed(self.main):
            g_main = block.backward(g_main)
        return g_main

    def params(self):
        out: list[Param] = []
        for block in self.main:
            out += block.params()
        for block in self.switch:
            out += block.params()
        return out + self.mask_proj.params() + self.head.params()

    def weight_matrices(self):
        out = [w for block in self.main for w in block.weight_matrices()]
        out += [w for block in self.switch for w in block.weight_matrices()]
        return out + [self.mask_proj.weight, self.head.weight]

    def buffers(self):
        out: dict[str, np.ndarray] = {}
        for block in self.main + self.switch:
            out.update(block.buffers())
        return out

    def load_buffers(self, state):
        for block in self.main + self.switch:
            block.load_buffers(state)


def mask_summary(masks: np.ndarray, feature_groups: dict[str, list[int]]
                 ) -> dict[str, np.ndarray]:
    """Sum mask weight per feature group for each row.

    `feature_groups` must partition the mask columns exactly; returns one
    weight series per group, so the per-row group sums total 1.
    """
    masks = np.asarray(masks, dtype=np.float64)
    width = masks.shape[1]
    indices = sorted(i for group in feature_groups.values() for i in group)
    if indices != list(range(width)):
        raise ConfigError(
            f"feature groups must partition 0..{width - 1}, got {indices}"
        )
    return {name: masks[:, list(idx)].sum(axis=1)
            for name, idx in feature_groups.items()}


def build_model(arch: dict, rng: np.random.Generator | None = None,
                slope: float = 0.01, dropout: float = 0.0,
                bn_momentum: float = 0.99) -> _ModelBase:
    """Construct a model from an architecture description dictionary."""
    kind = arch.get("kind")
    task = arch.get("task", "binary")
    if kind == "linear":
        return LinearModel(arch.get("in_dim", 33), rng, task)
    if kind == "ann":
        return PlainANN(arch.get("in_dim", 33), arch.get("width", 33),
                        arch.get("hidden_layers", 22), rng, slope, dropout,
                        bn_momentum, task)
    if kind == "attention_resnet":
        return AttentionResNet(arch.get("width", 33), arch.get("n_blocks", 11),
                               tuple(arch.get("attention_blocks", (0, 2, 4, 6, 8, 10))),
                               arch.get("attention_hidden"), rng, slope,
                               dropout, bn_momentum, task)
    if kind == "switching_resnet":
        return SwitchingResNet(arch.get("main_width", 33), arch.get("main_blocks", 3),
                               arch.get("switch_width", 41), arch.get("switch_blocks", 3),
                               rng, slope, dropout, bn_momentum, task)
    raise ConfigError(f"unknown model kind: {kind!r}")
