"""Structural knowledge: per-sample ReLU activation patterns of a frozen network."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_nn import Network, NetworkSpec, forward, init_network, spec_fingerprint, train_epochs
from .data_io import Dataset
from .errors import InputError, ShapeError


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """One boolean mask per hidden layer; True marks an active neuron."""

    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        ms = []
        for m in self.masks:
            arr = np.array(m).reshape(-1)
            if arr.dtype != bool:
                if not np.all((arr == 0) | (arr == 1)):
                    raise InputError("mask entries must be 0 or 1")
                arr = arr.astype(bool)
            arr.setflags(write=False)
            ms.append(arr)
        object.__setattr__(self, "masks", tuple(ms))

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(len(m) for m in self.masks)

    def equals(self, other: ActivationPattern) -> bool:
        return self.hidden_sizes == other.hidden_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.masks, other.masks)
        )

    def as_lists(self) -> list[list[int]]:
        return [m.astype(int).tolist() for m in self.masks]

    def check(self, layer_sizes: Sequence[int]) -> None:
        if self.hidden_sizes != tuple(layer_sizes[1:-1]):
            raise InputError(
                f"pattern layer sizes {list(self.hidden_sizes)} do not match hidden sizes {list(layer_sizes[1:-1])}"
            )


class PatternSet:
    """Activation patterns for a dataset, index-aligned with its samples.

    Stored as one ``(n_samples, h_l)`` boolean matrix per hidden layer.
    """

    def __init__(self, layer_sizes: Sequence[int], layer_masks: Sequence[np.ndarray]):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        hidden = self.layer_sizes[1:-1]
        if len(layer_masks) != len(hidden):
            raise InputError(f"expected {len(hidden)} mask layers, got {len(layer_masks)}")
        ms = []
        n = None
        for h, m in zip(hidden, layer_masks):
            arr = np.array(m, dtype=bool)
            if arr.ndim != 2 or arr.shape[1] != h:
                raise InputError(f"mask layer of shape {arr.shape} does not match width {h}")
            if n is not None and arr.shape[0] != n:
                raise InputError("mask layers disagree on the number of samples")
            n = arr.shape[0]
            arr.setflags(write=False)
            ms.append(arr)
        self.layer_masks = tuple(ms)

    @classmethod
    def empty(cls, layer_sizes: Sequence[int]) -> PatternSet:
        return cls(layer_sizes, [np.zeros((0, h), dtype=bool) for h in layer_sizes[1:-1]])

    @classmethod
    def from_patterns(cls, layer_sizes: Sequence[int], patterns: Sequence[ActivationPattern]) -> PatternSet:
        if not patterns:
            return cls.empty(layer_sizes)
        for p in patterns:
            p.check(layer_sizes)
        L = len(layer_sizes) - 2
        return cls(layer_sizes, [np.stack([p.masks[l] for p in patterns]) for l in range(L)])

    @property
    def spec_fingerprint(self) -> str:
        return spec_fingerprint(self.layer_sizes)

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.layer_sizes[1:-1]

    def __len__(self) -> int:
        return self.layer_masks[0].shape[0]

    def __getitem__(self, i: int) -> ActivationPattern:
        return ActivationPattern(tuple(m[i] for m in self.layer_masks))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def patterns(self) -> list[ActivationPattern]:
        return list(self)

    def subset(self, indices) -> PatternSet:
        idx = np.asarray(indices, dtype=np.int64)
        return PatternSet(self.layer_sizes, [m[idx] for m in self.layer_masks])

    def concat(self, other: PatternSet) -> PatternSet:
        if other.spec_fingerprint != self.spec_fingerprint:
            raise InputError("cannot concatenate pattern sets of different architectures")
        return PatternSet(
            self.layer_sizes,
            [np.vstack([a, b]) for a, b in zip(self.layer_masks, other.layer_masks)],
        )

    def content_hash(self) -> str:
        h = hashlib.sha256(self.spec_fingerprint.encode())
        for m in self.layer_masks:
            h.update(np.packbits(m, axis=None).tobytes())
            h.update(str(m.shape).encode())
        return h.hexdigest()

    def equals(self, other: PatternSet) -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.layer_masks, other.layer_masks))
        )

    def check_aligned(self, data: Dataset, layer_sizes: Sequence[int] | None = None) -> None:
        if len(self) != len(data):
            raise InputError(f"{len(self)} patterns for {len(data)} samples")
        if layer_sizes is not None and tuple(layer_sizes) != self.layer_sizes:
            raise InputError(
                f"patterns were captured for {list(self.layer_sizes)}, not {list(layer_sizes)}"
            )


# --------------------------------------------------------------------------
# Capture
# --------------------------------------------------------------------------

def capture_pattern(net: Network, x) -> ActivationPattern:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("capture_pattern takes a single sample; use capture_patterns for batches")
    _, cache = forward(net, x)
    return ActivationPattern(tuple(m[0] for m in cache.masks))


def capture_patterns(net: Network, data: Dataset) -> PatternSet:
    """Forward the whole dataset through ``net`` and keep the ReLU indicators."""
    if len(data) == 0:
        return PatternSet.empty(net.spec.layer_sizes)
    if data.n_features != net.spec.n_inputs:
        raise ShapeError(f"dataset has {data.n_features} features, network expects {net.spec.n_inputs}")
    _, cache = forward(net, data.features)
    return PatternSet(net.spec.layer_sizes, cache.masks)


def extend_patterns(net: Network, ps: PatternSet, new_data: Dataset) -> PatternSet:
    """Append patterns for new samples only; existing patterns are reused as-is."""
    if ps.layer_sizes != net.spec.layer_sizes:
        raise InputError("pattern set and selector network have different architectures")
    return ps.concat(capture_patterns(net, new_data))


def pattern_diff(a: PatternSet, b: PatternSet) -> float:
    """Fraction of (sample, hidden neuron) bits that differ between two sets."""
    if a.spec_fingerprint != b.spec_fingerprint:
        raise InputError("pattern sets come from different architectures")
    if len(a) != len(b):
        raise InputError(f"pattern sets have different lengths ({len(a)} vs {len(b)})")
    total = len(a) * sum(a.hidden_sizes)
    if total == 0:
        return 0.0
    changed = sum(int(np.count_nonzero(x != y)) for x, y in zip(a.layer_masks, b.layer_masks))
    return changed / total


# --------------------------------------------------------------------------
# Stabilisation trace
# --------------------------------------------------------------------------

@dataclass
class TraceRow:
    epoch: int
    diff: float
    train_loss: float
    val_loss: float
    train_accuracy: float = float("nan")
    val_accuracy: float = float("nan")


def convergence_trace(
    spec: NetworkSpec,
    data: Dataset,
    val: Dataset,
    epochs: int,
    lr: float,
    batch: int,
    seed: int,
    metric: str = "neuron",
    net: Network | None = None,
) -> list[TraceRow]:
    """Train from ``init_network(spec)`` and, after each epoch, compare the
    validation-set patterns with those of the previous epoch (epoch 1 is
    compared against the untrained network).

    ``metric="path"`` measures the fraction of (sample, path) activity bits
    that changed instead of neuron bits; only practical for small nets.
    """
    if metric not in ("neuron", "path"):
        raise InputError(f"unknown pattern metric {metric!r}")
    if net is None:
        net = init_network(spec)
    if metric == "path":
        from .path_algebra import enumerate_paths, path_pattern_diff

        table = enumerate_paths(net.spec)

        def diff_fn(p, q):
            return path_pattern_diff(table, p, q)
    else:
        diff_fn = pattern_diff

    prev = capture_patterns(net, val)
    rows: list[TraceRow] = []

    def on_epoch(n: Network, rec) -> None:
        nonlocal prev
        cur = capture_patterns(n, val)
        rows.append(
            TraceRow(rec.epoch, diff_fn(prev, cur), rec.train_loss, rec.val_loss,
                     rec.train_accuracy, rec.val_accuracy)
        )
        prev = cur

    train_epochs(net, data, epochs, lr, batch, seed, val=val, on_epoch=on_epoch)
    return rows
