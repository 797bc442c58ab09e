"""Dense ReLU network: init, forward/backward, cross-entropy and mini-batch SGD.

Conventions used throughout the package:

* ``layer_sizes = [I, h1, ..., hL, O]``; ``weights[l]`` has shape
  ``(layer_sizes[l+1], layer_sizes[l])`` so ``z = W @ a + b``.
* hidden layers use ReLU, the output layer is linear (softmax lives in the loss).
* a batch is a 2-D array with one sample per row; gradients are averaged
  over the batch.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_io import Dataset, batch_indices
from .errors import ConfigurationError, DivergenceError, InputError, ShapeError
from .rng import MASK64, SplitMix64


def spec_fingerprint(layer_sizes: Sequence[int]) -> str:
    """Architecture hash shared by networks, pattern sets and path tables."""
    text = "glai-spec:" + ",".join(str(int(s)) for s in layer_sizes)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ConfigurationError(
                f"need at least input, one hidden and output layer, got {list(sizes)}"
            )
        if min(sizes) < 1:
            raise ConfigurationError(f"layer sizes must be >= 1, got {list(sizes)}")
        if not 0 <= int(self.seed) <= MASK64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.layer_sizes[1:-1]

    @property
    def fingerprint(self) -> str:
        return spec_fingerprint(self.layer_sizes)


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ShapeError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Network:
    """Weights and biases of a dense ReLU network. Arrays are read-only."""

    spec: NetworkSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        n = len(sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError(f"spec has {n} weight layers, got {len(self.weights)}/{len(self.biases)}")
        ws = tuple(_frozen(w, (sizes[l + 1], sizes[l])) for l, w in enumerate(self.weights))
        bs = tuple(_frozen(b, (sizes[l + 1],)) for l, b in enumerate(self.biases))
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def equals(self, other: Network) -> bool:
        """Bitwise equality of spec and all parameters."""
        if self.spec != other.spec:
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self.parameters(), other.parameters()))


@dataclass(frozen=True, eq=False)
class Gradients:
    d_weights: tuple[np.ndarray, ...]
    d_biases: tuple[np.ndarray, ...]


@dataclass(eq=False)
class ForwardCache:
    input: np.ndarray                      # (B, I)
    pre_activations: list[np.ndarray]      # z per layer, (B, size)
    post_activations: list[np.ndarray]     # a per layer; last one equals the logits
    masks: list[np.ndarray]                # derivative used for each hidden layer, bool (B, h)
    single: bool = False                   # input was a single vector
    masked: bool = False                   # masks came from an external pattern


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------

def init_network(spec: NetworkSpec) -> Network:
    """Kaiming-uniform weights in +-sqrt(6/fan_in), zero biases.

    Weights are drawn from one splitmix64 stream seeded with ``spec.seed``,
    layer by layer, row-major within a layer.
    """
    if not isinstance(spec, NetworkSpec):
        spec = NetworkSpec(*spec)
    sizes = spec.layer_sizes
    rng = SplitMix64(spec.seed)
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        limit = math.sqrt(6.0 / fan_in)
        u = rng.uniform(fan_out * fan_in).reshape(fan_out, fan_in)
        weights.append((2.0 * u - 1.0) * limit)
        biases.append(np.zeros(fan_out))
    return Network(spec, tuple(weights), tuple(biases))


def zeros_like_network(net: Network) -> Network:
    return Network(
        net.spec,
        tuple(np.zeros_like(w) for w in net.weights),
        tuple(np.zeros_like(b) for b in net.biases),
    )


# --------------------------------------------------------------------------
# Activations and loss
# --------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0) if isinstance(x, np.ndarray) else max(x, 0.0)


def relu_derivative(x):
    """1 where x > 0, else 0 (including x == 0)."""
    if isinstance(x, np.ndarray):
        return (x > 0).astype(np.float64)
    return 1.0 if x > 0 else 0.0


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(labels: np.ndarray, n_out: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_out):
        raise InputError(f"label out of range for {n_out} outputs")


def loss_cce(logits, label):
    """Categorical cross-entropy ``-log softmax(logits)[label]``.

    1-D logits with a scalar label give a float; a (B, O) batch gives the
    per-sample loss vector.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        lab = int(label)
        if not 0 <= lab < z.shape[0]:
            raise InputError(f"label {lab} out of range for {z.shape[0]} logits")
        return float(-log_softmax(z)[lab])
    labels = np.asarray(label, dtype=np.int64).reshape(-1)
    if len(labels) != len(z):
        raise ShapeError(f"{len(z)} logit rows but {len(labels)} labels")
    _check_labels(labels, z.shape[1])
    return -log_softmax(z)[np.arange(len(z)), labels]


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------

def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.spec.n_inputs:
        raise ShapeError(f"input has shape {np.shape(x)}, network expects {net.spec.n_inputs} features")
    return arr, single


def _propagate(net: Network, x, masks: Sequence[np.ndarray] | None) -> tuple[np.ndarray, ForwardCache]:
    X, single = _as_batch(net, x)
    pre, post, used = [], [], []
    a = X
    last = net.n_layers - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        pre.append(z)
        if l == last:
            a = z
        else:
            m = z > 0 if masks is None else masks[l]
            a = np.where(m, z, 0.0)
            used.append(m)
        post.append(a)
    cache = ForwardCache(X, pre, post, used, single=single, masked=masks is not None)
    logits = a[0] if single else a
    return logits, cache


def forward(net: Network, x) -> tuple[np.ndarray, ForwardCache]:
    """Logits for one sample (1-D ``x``) or a batch (2-D ``x``)."""
    return _propagate(net, x, None)


def predict(net: Network, X) -> np.ndarray:
    return forward(net, X)[0]


def _backprop(net: Network, cache: ForwardCache, labels) -> Gradients:
    X = cache.input
    B = X.shape[0]
    if len(cache.pre_activations) != net.n_layers:
        raise ShapeError("cache does not belong to this network")
    for z, size in zip(cache.pre_activations, net.spec.layer_sizes[1:]):
        if z.shape != (B, size):
            raise ShapeError("cache does not belong to this network")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != B:
        raise ShapeError(f"{B} cached samples but {len(labels)} labels")
    _check_labels(labels, net.spec.n_outputs)

    logits = cache.post_activations[-1]
    delta = softmax(logits)
    delta[np.arange(B), labels] -= 1.0
    delta /= B
    d_w = [None] * net.n_layers
    d_b = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        a_prev = X if l == 0 else cache.post_activations[l - 1]
        d_w[l] = delta.T @ a_prev
        d_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = np.where(cache.masks[l - 1], delta @ net.weights[l], 0.0)
    return Gradients(tuple(d_w), tuple(d_b))


def backward(net: Network, cache: ForwardCache, label) -> Gradients:
    """Exact gradient of the (batch-mean) cross-entropy w.r.t. all parameters."""
    return _backprop(net, cache, label)


def sgd_step(net: Network, g: Gradients, lr: float) -> Network:
    if lr < 0:
        raise InputError("learning rate must be >= 0")
    if len(g.d_weights) != net.n_layers or len(g.d_biases) != net.n_layers:
        raise ShapeError("gradient layer count does not match network")
    new_w, new_b = [], []
    for W, dW in zip(net.weights, g.d_weights):
        if W.shape != dW.shape:
            raise ShapeError(f"gradient shape {dW.shape} vs weight shape {W.shape}")
        new_w.append(W - lr * dW)
    for b, db in zip(net.biases, g.d_biases):
        if b.shape != db.shape:
            raise ShapeError(f"gradient shape {db.shape} vs bias shape {b.shape}")
        new_b.append(b - lr * db)
    if not all(np.all(np.isfinite(p)) for p in new_w + new_b):
        raise DivergenceError("SGD step produced non-finite parameters")
    return Network(net.spec, tuple(new_w), tuple(new_b))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(net: Network, data: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``net`` on ``data``."""
    logits = predict(net, data.features)
    return float(np.mean(loss_cce(logits, data.labels))), accuracy(logits, data.labels)


GradFn = Callable[[Network, np.ndarray], Gradients]
EvalFn = Callable[[Network, Dataset], tuple[float, float]]


def run_sgd(
    net: Network,
    data: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    grad_fn: GradFn,
    train_eval: Callable[[Network], tuple[float, float]],
    val_eval: Callable[[Network], tuple[float, float]] | None = None,
    on_epoch: Callable[[Network, EpochRecord], None] | None = None,
) -> tuple[Network, list[EpochRecord]]:
    """Shared mini-batch SGD loop.

    ``grad_fn(net, idx)`` returns gradients for the samples ``idx`` of
    ``data``. Batch order for epoch ``e`` (1-based) comes from
    ``batch_indices(n, batch_size, seed, e)``.
    """
    if len(data) == 0:
        raise InputError("cannot train on an empty dataset")
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    if epochs < 0:
        raise InputError("epochs must be >= 0")
    history: list[EpochRecord] = []
    for epoch in range(1, epochs + 1):
        for idx in batch_indices(len(data), batch_size, seed, epoch):
            net = sgd_step(net, grad_fn(net, idx), lr)
        tl, ta = train_eval(net)
        rec = EpochRecord(epoch, tl, ta)
        if val_eval is not None:
            rec.val_loss, rec.val_accuracy = val_eval(net)
        if on_epoch is not None:
            on_epoch(net, rec)
        history.append(rec)
    return net, history


def train_epochs(
    net: Network,
    data: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    val: Dataset | None = None,
    on_epoch=None,
) -> tuple[Network, list[EpochRecord]]:
    """Traditional mini-batch SGD on cross-entropy."""
    X, y = data.features, data.labels

    def grad(n: Network, idx: np.ndarray) -> Gradients:
        _, cache = forward(n, X[idx])
        return backward(n, cache, y[idx])

    return run_sgd(
        net, data, epochs, lr, batch_size, seed, grad,
        train_eval=lambda n: evaluate(n, data),
        val_eval=(lambda n: evaluate(n, val)) if val is not None and len(val) else None,
        on_epoch=on_epoch,
    )
