"""Dense-layer network with masked forward/backward passes and SGD training.

Weights are float64 throughout; a mask entry of 0 removes the weight from the
forward pass and freezes it bit-identically through training. Biases are never
masked and always train.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMaskWarning, ShapeMismatchError


@dataclass(frozen=True)
class ModelSpec:
    """Layer layout of a fully-connected classifier.

    layer_sizes runs input dim, hidden dims, output dim. Hidden layers are
    rectified-linear; the output layer is linear logits trained with softmax
    cross-entropy.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    loss: str = "softmax_cross_entropy"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least two layer sizes (one weight tensor)")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.loss != "softmax_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        """Per-layer weight shapes, rows = destination, cols = source."""
        s = self.layer_sizes
        return tuple((s[i + 1], s[i]) for i in range(self.n_layers))


class DenseWeights:
    """Per-layer weight matrices plus bias vectors."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have one entry per layer")

    def copy(self) -> "DenseWeights":
        return DenseWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def validate(self, spec: ModelSpec) -> None:
        for i, (shape, w, b) in enumerate(zip(spec.shapes, self.weights, self.biases)):
            if w.shape != shape:
                raise ShapeMismatchError(i, shape, w.shape)
            if b.shape != (shape[0],):
                raise ShapeMismatchError(i, (shape[0],), b.shape, what="bias")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite values")
        if len(self.weights) != spec.n_layers:
            raise ValueError(f"expected {spec.n_layers} layers, got {len(self.weights)}")


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings: epoch count, batch size, LR schedule, seed.

    The schedule is lr_epoch = max(lr_initial * lr_decay**epoch, lr_floor);
    defaults start at 0.01 and bottom out at 0.0001.
    """

    epochs: int = 50
    batch_size: int = 128
    lr_initial: float = 0.01
    lr_decay: float = 0.9
    lr_floor: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_initial > self.lr_floor > 0):
            raise ValueError("need lr_initial > lr_floor > 0")

    def lr_at(self, epoch: int) -> float:
        return max(self.lr_initial * self.lr_decay**epoch, self.lr_floor)


def xavier_init(spec: ModelSpec, seed) -> DenseWeights:
    """Uniform Xavier draw per layer, bound sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for out_dim, in_dim in spec.shapes:
        a = np.sqrt(6.0 / (in_dim + out_dim))
        weights.append(rng.uniform(-a, a, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return DenseWeights(weights, biases)


def _check_shapes(spec: ModelSpec, weights: DenseWeights, mask, batch: np.ndarray) -> None:
    if batch.ndim != 2 or batch.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatchError(
            0, ("*", spec.layer_sizes[0]), batch.shape, what="input batch"
        )
    weights.validate(spec)
    for i, (shape, m) in enumerate(zip(spec.shapes, mask)):
        if np.shape(m) != shape:
            raise ShapeMismatchError(i, shape, np.shape(m), what="mask")


def _forward_cached(spec, weights, mask, batch):
    """Returns (logits, activations, pre_activations) for backprop."""
    acts = [np.asarray(batch, dtype=np.float64)]
    zs = []
    n = spec.n_layers
    for i in range(n):
        w = weights.weights[i] * mask[i]
        z = acts[-1] @ w.T + weights.biases[i]
        zs.append(z)
        acts.append(np.maximum(z, 0.0) if i < n - 1 else z)
    return zs[-1], acts, zs


def forward(spec: ModelSpec, weights: DenseWeights, mask, batch: np.ndarray) -> np.ndarray:
    """Masked forward pass to logits; masked-out weights contribute exactly zero."""
    batch = np.asarray(batch, dtype=np.float64)
    _check_shapes(spec, weights, mask, batch)
    logits, _, _ = _forward_cached(spec, weights, mask, batch)
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(spec, weights, mask, batch, labels):
    """Mean softmax cross-entropy and its gradients, weight grads pre-masked."""
    logits, acts, zs = _forward_cached(spec, weights, mask, batch)
    n = batch.shape[0]
    log_p = _log_softmax(logits)
    loss = -log_p[np.arange(n), labels].mean()

    dz = np.exp(log_p)
    dz[np.arange(n), labels] -= 1.0
    dz /= n

    grads_w = [None] * spec.n_layers
    grads_b = [None] * spec.n_layers
    for i in range(spec.n_layers - 1, -1, -1):
        grads_w[i] = (dz.T @ acts[i]) * mask[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ (weights.weights[i] * mask[i])) * (zs[i - 1] > 0)
    return loss, grads_w, grads_b


def train_masked(spec, weights, mask, data, cfg: TrainConfig):
    """SGD on the masked sub-network; returns (new weights, final train accuracy).

    Gradients outside the mask are zero, so masked-out weights come back
    bit-identical. epochs=0 returns an untouched copy.
    """
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    _check_shapes(spec, weights, mask, X)
    for i in range(spec.n_layers):
        if not np.any(mask[i]):
            warnings.warn(
                f"layer {i} mask is empty; training proceeds on a degenerate network",
                DegenerateMaskWarning,
                stacklevel=2,
            )

    out = weights.copy()
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, gw, gb = loss_and_grads(spec, out, mask, X[idx], y[idx])
            for i in range(spec.n_layers):
                out.weights[i] -= lr * gw[i]
                out.biases[i] -= lr * gb[i]
    return out, evaluate(spec, out, mask, X, y)


def evaluate(spec, weights, mask, batch, labels) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class."""
    batch = np.asarray(batch)
    if batch.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = forward(spec, weights, mask, batch)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def full_mask(spec: ModelSpec) -> list[np.ndarray]:
    """All-ones mask, one layer per weight matrix of `spec`."""
    return [np.ones(shape, dtype=bool) for shape in spec.shapes]
