"""Datasets: IDX and CSV loaders, Gaussian-cluster generator, split and batching."""

from __future__ import annotations

import csv
import gzip
import math
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .fileio import write_text_atomic
from .rng import SplitMix64, derive_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SPLIT_TAG = 0x5E1D
_CLUSTER_TAG = 0xC1A5


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer class labels, one row per sample."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, 0)
        if x.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {x.shape}")
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if len(y) != len(x):
            raise InputError(f"{len(x)} feature rows but {len(y)} labels")
        if self.n_classes < 1:
            raise InputError("n_classes must be >= 1")
        if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(x)):
            raise InputError("features contain NaN or Inf")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def head(self, n: int) -> Dataset:
        return self.subset(np.arange(min(n, len(self))))

    def concat(self, other: Dataset) -> Dataset:
        if len(self) and len(other) and self.n_features != other.n_features:
            raise InputError("cannot concatenate datasets of different widths")
        if not len(self):
            feats = other.features
        elif not len(other):
            feats = self.features
        else:
            feats = np.vstack([self.features, other.features])
        return Dataset(
            feats,
            np.concatenate([self.labels, other.labels]),
            max(self.n_classes, other.n_classes),
        )

    def equals(self, other: Dataset) -> bool:
        return (
            self.n_classes == other.n_classes
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


# --------------------------------------------------------------------------
# IDX
# --------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    if len(buf) < 4:
        raise FormatError(f"{what} file too short for magic number", 0, unit="byte")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise FormatError(
            f"bad magic 0x{found:08x} in {what} file, expected 0x{magic:08x}", 0, unit="byte"
        )
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise FormatError(f"{what} header truncated", len(buf), unit="byte")
    return struct.unpack(">" + "I" * ndim, buf[4:end])


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (optionally gzipped).

    Images are flattened row-major and scaled by 1/255.
    """
    ibuf = _read_bytes(images_path)
    lbuf = _read_bytes(labels_path)
    n_img, rows, cols = _idx_header(ibuf, IDX_IMAGES_MAGIC, 3, "images")
    (n_lab,) = _idx_header(lbuf, IDX_LABELS_MAGIC, 1, "labels")
    if n_img != n_lab:
        raise FormatError(f"{n_img} images but {n_lab} labels", 4, unit="byte")
    need = 16 + n_img * rows * cols
    if len(ibuf) < need:
        raise FormatError(f"images file truncated: need {need} bytes", len(ibuf), unit="byte")
    if len(lbuf) < 8 + n_lab:
        raise FormatError(f"labels file truncated: need {8 + n_lab} bytes", len(lbuf), unit="byte")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n_lab else 1
    return Dataset(features, labels, n_classes)


def write_idx(data: Dataset, images_path, labels_path, shape: tuple[int, int]) -> None:
    """Write features (assumed in [0,1]) back to an IDX pair. Used for fixtures."""
    rows, cols = shape
    if rows * cols != data.n_features:
        raise InputError(f"shape {shape} does not match {data.n_features} features")
    pix = np.clip(np.rint(data.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(data), rows, cols))
        fh.write(pix.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(data)))
        fh.write(data.labels.astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def load_csv(path, label_column: str | int = "label", n_classes: int | None = None) -> Dataset:
    """Numeric CSV with a header row. Non-label columns become features in header order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("missing header", 1) from None
        if isinstance(label_column, int):
            li = label_column
            if not 0 <= li < len(header):
                raise FormatError(f"label column {li} out of range", 1)
        else:
            if label_column not in header:
                raise FormatError(f"no column named {label_column!r}", 1)
            li = header.index(label_column)
        feats, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"expected {len(header)} cells, found {len(row)}", lineno)
            if any(c.strip() == "" for c in row):
                raise FormatError("missing cell", lineno)
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise FormatError("non-numeric cell", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise FormatError("non-finite cell", lineno)
            lab = values[li]
            if lab != int(lab) or lab < 0:
                raise FormatError(f"label {row[li]!r} is not a class index", lineno)
            labels.append(int(lab))
            feats.append(values[:li] + values[li + 1:])
    width = len(header) - 1
    x = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    if n_classes is None:
        n_classes = max(labels) + 1 if labels else 1
    return Dataset(x, np.array(labels, dtype=np.int64), n_classes)


def dumps_csv(data: Dataset, label_column: str = "label") -> str:
    """``f0..f{d-1},label`` rows; floats use the shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{i}" for i in range(data.n_features)] + [label_column])
    for row, lab in zip(data.features.tolist(), data.labels.tolist()):
        w.writerow([repr(v) for v in row] + [lab])
    return buf.getvalue()


def save_csv(data: Dataset, path, label_column: str = "label") -> None:
    write_text_atomic(path, dumps_csv(data, label_column))


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

def synth_clusters(seed: int, n_classes: int, dims: int, per_class: int, spread: float) -> Dataset:
    """Isotropic Gaussian blobs around seeded centres in the unit cube.

    Samples are stored class by class (all of class 0 first).
    """
    if min(n_classes, dims, per_class) < 1:
        raise InputError("n_classes, dims and per_class must all be >= 1")
    if spread < 0 or not math.isfinite(spread):
        raise InputError("spread must be finite and >= 0")
    rng = SplitMix64(derive_seed(seed, _CLUSTER_TAG))
    centers = rng.uniform(n_classes * dims).reshape(n_classes, dims)
    noise = rng.normal(n_classes * per_class * dims).reshape(n_classes, per_class, dims)
    x = centers[:, None, :] + spread * noise
    y = np.repeat(np.arange(n_classes), per_class)
    return Dataset(x.reshape(-1, dims), y, n_classes)


# --------------------------------------------------------------------------
# Split / batching
# --------------------------------------------------------------------------

def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then cut. Both halves keep the shuffled order."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError("train_fraction must be in (0, 1)")
    n = len(data)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise InputError(f"split of {n} samples at {train_fraction} leaves one side empty")
    perm = SplitMix64(derive_seed(seed, _SPLIT_TAG)).permutation(n)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index chunks for one epoch; the last short chunk is kept."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    perm = SplitMix64(derive_seed(seed, epoch)).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(data: Dataset, batch_size: int, seed: int, epoch: int) -> list[Dataset]:
    return [data.subset(idx) for idx in batch_indices(len(data), batch_size, seed, epoch)]
