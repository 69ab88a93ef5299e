"""Minimal 1-D convolutional network on numpy, float64 throughout.

The input layout is (batch, channels, length): m/z channels are feature
channels and convolution runs only along the RT axis ('valid', no
padding), so filters see every channel but never mix RT context beyond
their kernel span. Layers are functional: ``forward`` returns
``(output, cache)`` and mutates nothing, making inference safe for
concurrent callers; training threads the caches through ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ContractError, VocScanError, derive_rng

# derive_rng streams under a network seed
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


class TrainingError(VocScanError):
    """Training diverged (non-finite loss) or cannot start."""


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max is subtracted first)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("softmax input must be finite")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against int labels, plus its gradient."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


# ---------------------------------------------------------------------------
# layers

class Conv1d:
    """Valid cross-correlation along the last axis; full channel mixing."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_channels * kernel)
        self.w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel))
        self.b = np.zeros(out_channels)
        self.in_channels = in_channels
        self.kernel = kernel

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ContractError(
                f"conv expects (batch, {self.in_channels}, length), got {x.shape}"
            )
        if x.shape[2] < self.kernel:
            raise ContractError(f"input length {x.shape[2]} shorter than kernel {self.kernel}")
        windows = sliding_window_view(x, self.kernel, axis=2)  # (B, Cin, Lout, k)
        out = np.einsum("bctu,ocu->bot", windows, self.w, optimize=True)
        out += self.b[:, None]
        return out, windows

    def backward(self, grad: np.ndarray, cache):
        windows = cache
        dw = np.einsum("bot,bctu->ocu", grad, windows, optimize=True)
        db = grad.sum(axis=(0, 2))
        padded = np.pad(grad, ((0, 0), (0, 0), (self.kernel - 1, self.kernel - 1)))
        grad_windows = sliding_window_view(padded, self.kernel, axis=2)
        dx = np.einsum("bosu,ocu->bcs", grad_windows, self.w[:, :, ::-1], optimize=True)
        return dx, [dw, db]


class ReLU:
    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        return np.maximum(x, 0.0), x > 0

    def backward(self, grad: np.ndarray, cache):
        return grad * cache, []


class MaxPool1d:
    """Non-overlapping max pooling along the last axis; remainder truncated."""

    def __init__(self, pool: int):
        if pool < 1:
            raise ContractError(f"pool length must be >= 1, got {pool}")
        self.pool = pool

    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        b, c, length = x.shape
        out_len = length // self.pool
        if out_len < 1:
            raise ContractError(f"input length {length} shorter than pool {self.pool}")
        blocks = x[:, :, : out_len * self.pool].reshape(b, c, out_len, self.pool)
        idx = blocks.argmax(axis=3)  # first index wins ties
        out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
        return out, (idx, x.shape)

    def backward(self, grad: np.ndarray, cache):
        idx, (b, c, length) = cache
        out_len = grad.shape[2]
        blocks = np.zeros((b, c, out_len, self.pool))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=3)
        dx = np.zeros((b, c, length))
        dx[:, :, : out_len * self.pool] = blocks.reshape(b, c, out_len * self.pool)
        return dx, []


class Flatten:
    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad: np.ndarray, cache):
        return grad.reshape(cache), []


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        self.b = np.zeros(out_dim)
        self.in_dim = in_dim

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(f"dense expects (batch, {self.in_dim}), got {x.shape}")
        return x @ self.w + self.b, x

    def backward(self, grad: np.ndarray, cache):
        x = cache
        return grad @ self.w.T, [x.T @ grad, grad.sum(axis=0)]


# ---------------------------------------------------------------------------
# network

@dataclass(frozen=True)
class ConvBlock:
    """One conv stage: filters, kernel rows along RT, pool rows (1 = none)."""

    filters: int
    kernel: int
    pool: int = 1

    def __post_init__(self) -> None:
        if self.filters < 1:
            raise ContractError(f"filters must be >= 1, got {self.filters}")
        if self.kernel < 1:
            raise ContractError(f"kernel length must be >= 1, got {self.kernel}")
        if self.pool < 1:
            raise ContractError(f"pool length must be >= 1, got {self.pool}")


@dataclass(frozen=True)
class ConvNetConfig:
    """Architecture and training hyperparameters for the reference network."""

    blocks: tuple[ConvBlock, ...] = (ConvBlock(32, 5, 2), ConvBlock(64, 5, 2), ConvBlock(64, 5, 2))
    dense: tuple[int, ...] = (128,)
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "dense", tuple(self.dense))
        if not self.blocks:
            raise ContractError("network needs at least one conv block")
        if any(w < 1 for w in self.dense):
            raise ContractError("dense widths must be >= 1")
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 <= self.momentum < 1.0):
            raise ContractError(f"momentum must be in [0, 1), got {self.momentum}")


class ConvNet1d:
    """Conv blocks -> dense stack -> class logits, built from a config.

    Weight initialization draws from a generator derived from
    ``config.seed``, uniform scaled by 1/sqrt(fan-in), biases zero;
    construction is fully deterministic.
    """

    def __init__(self, config: ConvNetConfig, in_channels: int, in_length: int, n_classes: int):
        if n_classes < 2:
            raise ContractError(f"need at least 2 classes, got {n_classes}")
        rng = derive_rng(config.seed, _STREAM_INIT)
        layers: list = []
        channels, length = in_channels, in_length
        for blk in config.blocks:
            if length < blk.kernel:
                raise ContractError(
                    f"length {length} too short for kernel {blk.kernel}; shrink the net or grow delta"
                )
            layers.append(Conv1d(channels, blk.filters, blk.kernel, rng))
            layers.append(ReLU())
            channels, length = blk.filters, length - blk.kernel + 1
            if blk.pool > 1:
                if length < blk.pool:
                    raise ContractError(
                        f"length {length} too short for pool {blk.pool}; shrink the net or grow delta"
                    )
                layers.append(MaxPool1d(blk.pool))
                length //= blk.pool
        layers.append(Flatten())
        dim = channels * length
        for width in config.dense:
            layers.append(Dense(dim, width, rng))
            layers.append(ReLU())
            dim = width
        layers.append(Dense(dim, n_classes, rng))
        self.layers = layers
        self.config = config
        self.in_channels = in_channels
        self.in_length = in_length
        self.n_classes = n_classes

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without caching; safe for concurrent callers."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (self.in_channels, self.in_length):
            raise ContractError(
                f"expected input (batch, {self.in_channels}, {self.in_length}), got {x.shape}"
            )
        for layer in self.layers:
            x, _ = layer.forward(x)
        return x

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))


def loss_and_gradients(
    net: ConvNet1d, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Cross-entropy loss on a batch plus gradients aligned with ``net.parameters()``."""
    caches = []
    a = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        a, cache = layer.forward(a)
        caches.append(cache)
    loss, grad = softmax_cross_entropy(a, np.asarray(y))
    grads: list[np.ndarray] = []
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        grad, layer_grads = layer.backward(grad, cache)
        grads = layer_grads + grads
    return loss, grads


def train_network(
    net: ConvNet1d,
    x: np.ndarray,
    y: np.ndarray,
    *,
    rng: np.random.Generator,
    epochs: int | None = None,
    batch_size: int | None = None,
    learning_rate: float | None = None,
    momentum: float | None = None,
) -> list[float]:
    """Mini-batch gradient descent with momentum; returns per-epoch mean loss.

    Hyperparameters default to the net's config. Deterministic given the
    shuffle generator: batches are visited in permutation order and the
    update order is fixed.

    Raises
    ------
    TrainingError
        The loss becomes non-finite (message carries epoch/batch/loss).
    """
    cfg = net.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    learning_rate = cfg.learning_rate if learning_rate is None else learning_rate
    momentum = cfg.momentum if momentum is None else momentum
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"{x.shape[0]} inputs vs {y.shape[0]} labels")
    if x.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise ContractError(f"labels must lie in [0, {net.n_classes - 1}]")
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    history = []
    n = x.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for batch_no, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            loss, grads = loss_and_gradients(net, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {batch_no}; "
                    f"lower the learning rate ({learning_rate}) or check the data"
                )
            for p, v, g in zip(params, velocity, grads):
                v *= momentum
                v -= learning_rate * g
                p += v
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
    return history
