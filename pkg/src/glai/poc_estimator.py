"""Masked network estimator: activation functions replaced by frozen patterns.

The estimator is a copy of the trained network whose hidden units output
``z`` when the selector marked them active and ``0`` otherwise, whatever the
sign of ``z``. Back-propagation uses the same masks as the derivative, so
only quantitative knowledge (weights and biases) is re-trained.
"""

from __future__ import annotations

import numpy as np

from .core_nn import (
    EpochRecord,
    ForwardCache,
    Gradients,
    Network,
    _backprop,
    _propagate,
    accuracy,
    loss_cce,
    run_sgd,
)
from .data_io import Dataset
from .errors import InputError
from .path_selector import ActivationPattern, PatternSet


def _mask_list(net: Network, p: ActivationPattern | PatternSet, n_samples: int) -> list[np.ndarray]:
    sizes = net.spec.layer_sizes
    if isinstance(p, PatternSet):
        if p.layer_sizes != sizes:
            raise InputError("pattern set architecture does not match the network")
        if len(p) != n_samples:
            raise InputError(f"{len(p)} patterns for {n_samples} samples")
        return list(p.layer_masks)
    if isinstance(p, ActivationPattern):
        p.check(sizes)
        return [np.broadcast_to(m, (n_samples, len(m))) for m in p.masks]
    raise InputError(f"expected ActivationPattern or PatternSet, got {type(p).__name__}")


def masked_forward(net: Network, x, p: ActivationPattern | PatternSet) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass with hidden outputs gated by ``p`` instead of ReLU.

    ``x`` may be one sample (with an ActivationPattern) or a batch (with a
    PatternSet of the same length, or one pattern broadcast to all rows).
    """
    X = np.asarray(x, dtype=np.float64)
    n = 1 if X.ndim == 1 else X.shape[0]
    return _propagate(net, X, _mask_list(net, p, n))


def masked_backward(net: Network, cache: ForwardCache, label, p: ActivationPattern | PatternSet) -> Gradients:
    """Gradient of the cross-entropy of :func:`masked_forward` outputs."""
    masks = _mask_list(net, p, cache.input.shape[0])
    if len(masks) != len(cache.masks) or not all(
        np.array_equal(np.broadcast_to(a, b.shape), b) for a, b in zip(masks, cache.masks)
    ):
        raise InputError("cache was not produced by masked_forward with this pattern")
    return _backprop(net, cache, label)


def masked_evaluate(net: Network, data: Dataset, ps: PatternSet) -> tuple[float, float]:
    logits, _ = masked_forward(net, data.features, ps)
    return float(np.mean(loss_cce(logits, data.labels))), accuracy(logits, data.labels)


def retrain_quantitative(
    est_net: Network,
    data: Dataset,
    ps: PatternSet,
    epochs: int,
    lr: float,
    batch: int,
    seed: int,
    val: Dataset | None = None,
    val_ps: PatternSet | None = None,
) -> tuple[Network, list[EpochRecord]]:
    """Mini-batch SGD on the masked estimator with per-sample frozen masks.

    Batch order matches :func:`glai.core_nn.train_epochs` for the same seed.
    """
    ps.check_aligned(data, est_net.spec.layer_sizes)
    if val is not None and len(val):
        if val_ps is None:
            raise InputError("validation data needs its own pattern set")
        val_ps.check_aligned(val, est_net.spec.layer_sizes)
    X, y = data.features, data.labels

    def grad(n: Network, idx: np.ndarray) -> Gradients:
        sub = ps.subset(idx)
        _, cache = masked_forward(n, X[idx], sub)
        return _backprop(n, cache, y[idx])

    return run_sgd(
        est_net, data, epochs, lr, batch, seed, grad,
        train_eval=lambda n: masked_evaluate(n, data, ps),
        val_eval=(lambda n: masked_evaluate(n, val, val_ps)) if val is not None and len(val) else None,
    )
