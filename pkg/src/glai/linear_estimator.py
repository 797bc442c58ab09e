"""Training and merging of the single-layer path-weight estimator.

With the selector frozen, the estimator output is linear in its path
weights: ``o = features(x, pattern) @ pw_matrix``. That gives three ways to
fit it (SGD on cross-entropy, SGD on squared error, direct ridge least
squares) and makes parameter-wise averaging a meaningful way to combine
copies trained on different data.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .core_nn import EpochRecord, accuracy, log_softmax, softmax
from .data_io import Dataset, batch_indices
from .errors import DivergenceError, InputError, RankDeficiencyError
from .path_algebra import LinearEstimator, PathTable
from .path_selector import PatternSet

DEFAULT_RIDGE = 1e-8
LOSSES = ("cce", "mse")

# precompute the full design matrix below this many entries
_DENSE_LIMIT = 20_000_000


def one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    t = np.zeros((len(labels), n))
    t[np.arange(len(labels)), labels] = 1.0
    return t


def loss_and_grad(pw_matrix: np.ndarray, features: np.ndarray, labels: np.ndarray, loss: str):
    """Mean loss over the batch and its gradient w.r.t. the (S, O) weights.

    ``mse`` is the per-sample squared error summed over outputs against a
    one-hot target. Only active stems have nonzero feature entries, so only
    active paths receive gradient.
    """
    B = features.shape[0]
    out = features @ pw_matrix
    if loss == "cce":
        lsm = log_softmax(out)
        value = float(-np.mean(lsm[np.arange(B), labels]))
        d_out = softmax(out)
        d_out[np.arange(B), labels] -= 1.0
    elif loss == "mse":
        diff = out - one_hot(labels, out.shape[1])
        value = float(np.mean(np.sum(diff * diff, axis=1)))
        d_out = 2.0 * diff
    else:
        raise InputError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return value, features.T @ d_out / B


def _check(est_table: PathTable, data: Dataset, ps: PatternSet) -> None:
    ps.check_aligned(data, est_table.layer_sizes)
    if len(data) and data.n_features != est_table.layer_sizes[0]:
        raise InputError(f"dataset has {data.n_features} features, estimator expects {est_table.layer_sizes[0]}")


def estimator_evaluate(est: LinearEstimator, data: Dataset, ps: PatternSet) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy on ``data``."""
    _check(est.table, data, ps)
    out = est.table.stem_features(data.features, ps) @ est.pw_matrix
    lsm = log_softmax(out)
    return float(-np.mean(lsm[np.arange(len(data)), data.labels])), accuracy(out, data.labels)


def estimator_sgd_train(
    est: LinearEstimator,
    data: Dataset,
    ps: PatternSet,
    epochs: int,
    lr: float,
    batch: int,
    seed: int,
    loss: str = "cce",
    val: Dataset | None = None,
    val_ps: PatternSet | None = None,
) -> tuple[LinearEstimator, list[EpochRecord]]:
    """Mini-batch SGD on the path weights with frozen per-sample patterns."""
    _check(est.table, data, ps)
    if len(data) == 0:
        raise InputError("cannot train on an empty dataset")
    if loss not in LOSSES:
        raise InputError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if lr < 0 or epochs < 0 or batch < 1:
        raise InputError("need lr >= 0, epochs >= 0 and batch >= 1")
    table = est.table
    dense = len(data) * table.n_stems <= _DENSE_LIMIT
    feats = table.stem_features(data.features, ps) if dense else None

    def batch_features(idx):
        if dense:
            return feats[idx]
        return table.stem_features(data.features[idx], ps.subset(idx))

    W = est.pw_matrix.copy()
    history = []
    for epoch in range(1, epochs + 1):
        for idx in batch_indices(len(data), batch, seed, epoch):
            _, g = loss_and_grad(W, batch_features(idx), data.labels[idx], loss)
            W = W - lr * g
        if not np.all(np.isfinite(W)):
            raise DivergenceError(f"path weights diverged in epoch {epoch}")
        cur = est.with_pw(W.reshape(-1))
        rec = EpochRecord(epoch, *estimator_evaluate(cur, data, ps))
        if val is not None and len(val):
            rec.val_loss, rec.val_accuracy = estimator_evaluate(cur, val, val_ps)
        history.append(rec)
    return est.with_pw(W.reshape(-1)), history


# --------------------------------------------------------------------------
# Direct least squares
# --------------------------------------------------------------------------

def ridge_lstsq(A: np.ndarray, Y: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Minimise ``||A x - y||^2 + ridge ||x||^2`` for each column of ``Y``.

    Solved by Householder QR of the stacked system ``[A; sqrt(ridge) I]``,
    never by forming ``A^T A``.
    """
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    vec = Y.ndim == 1
    if vec:
        Y = Y[:, None]
    m, n = A.shape
    if ridge < 0:
        raise InputError("ridge must be >= 0")
    if n == 0:
        return np.zeros((0,) if vec else (0, Y.shape[1]))
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(n)])
        Y = np.vstack([Y, np.zeros((n, Y.shape[1]))])
    elif m < n:
        raise RankDeficiencyError(
            f"{m} equations for {n} unknowns; use ridge > 0 for underdetermined systems"
        )
    Q, R = linalg.qr(A, mode="economic")
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * diag.max()
    if ridge == 0 and (diag.max() == 0 or diag.min() <= tol):
        raise RankDeficiencyError("least-squares system is rank deficient; use ridge > 0")
    X = linalg.solve_triangular(R, Q.T @ Y, lower=False)
    # Path design matrices often have exactly dependent 0/1 columns. Along
    # such a direction the ridge solution is zero, but double-precision
    # rounding in A^T r is amplified by 1/ridge. Refining with residuals
    # accumulated in extended precision removes most of that noise.
    A0, Y0 = A[:m], Y[:m]
    for _ in range(_REFINE_STEPS):
        G = _normal_residual(A0, Y0, X, ridge)
        dX = linalg.solve_triangular(R, linalg.solve_triangular(R, G, trans="T"), lower=False)
        X = X + dX
        if np.max(np.abs(dX)) <= np.finfo(float).eps * max(np.max(np.abs(X)), 1e-300):
            break
    return X[:, 0] if vec else X


_REFINE_STEPS = 3
_CHUNK_ELEMENTS = 1 << 21


def _normal_residual(A: np.ndarray, Y: np.ndarray, X: np.ndarray, ridge: float) -> np.ndarray:
    """``A^T (Y - A X) - ridge X`` accumulated in long double, by row chunks."""
    wide = np.longdouble
    Xw = X.astype(wide)
    G = -wide(ridge) * Xw
    step = max(1, _CHUNK_ELEMENTS // max(A.shape[1], 1))
    for lo in range(0, A.shape[0], step):
        Aw = A[lo:lo + step].astype(wide)
        G += Aw.T @ (Y[lo:lo + step].astype(wide) - Aw @ Xw)
    return G.astype(np.float64)


def estimator_direct_solve(
    table: PathTable,
    data: Dataset,
    ps: PatternSet,
    ridge: float = DEFAULT_RIDGE,
    targets: np.ndarray | None = None,
) -> LinearEstimator:
    """Fit all path weights at once by ridge least squares.

    Every output shares the same design matrix (one row per sample, one
    column per stem), so a single QR factorisation serves all outputs.
    Targets default to one-hot labels. Paths never active in ``data`` get 0.
    """
    _check(table, data, ps)
    O = table.n_outputs
    if targets is None:
        if data.n_classes > O:
            raise InputError(f"{data.n_classes} classes but only {O} outputs")
        targets = one_hot(data.labels, O)
    targets = np.asarray(targets, dtype=np.float64).reshape(len(data), O)
    act = table.stem_activity(ps) if len(data) else np.zeros((0, table.n_stems), dtype=bool)
    used = np.flatnonzero(act.any(axis=0))
    A = np.where(act[:, used], table.stem_values(data.features)[:, used], 0.0) if len(used) else np.zeros((len(data), 0))
    W = np.zeros((table.n_stems, O))
    W[used] = ridge_lstsq(A, targets, ridge)
    return LinearEstimator(table, W.reshape(-1))


def design_matrix(table: PathTable, data: Dataset, ps: PatternSet) -> np.ndarray:
    """(n, S) stem design matrix shared by every output."""
    return table.stem_features(data.features, ps)


# --------------------------------------------------------------------------
# Merging, incremental and federated re-training
# --------------------------------------------------------------------------

def _same_table(a: LinearEstimator, b: LinearEstimator) -> None:
    if a.table.spec_fingerprint != b.table.spec_fingerprint or len(a.pw) != len(b.pw):
        raise InputError("estimators were built for different path tables")


def merge_estimators(a: LinearEstimator, b: LinearEstimator, alpha: float = 0.5) -> LinearEstimator:
    """Parameter-wise ``alpha * a + (1 - alpha) * b``."""
    _same_table(a, b)
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return a.with_pw(a.pw)
    if alpha == 0.0:
        return b.with_pw(b.pw)
    # where both agree keep the value itself, so merge(e, e, alpha) == e bitwise
    mixed = alpha * a.pw + (1.0 - alpha) * b.pw
    return a.with_pw(np.where(a.pw == b.pw, a.pw, mixed))


def weighted_average(estimators: Sequence[LinearEstimator], weights: Sequence[float]) -> LinearEstimator:
    """Flat weighted mean; weights are normalised to sum to one."""
    if not estimators or len(estimators) != len(weights):
        raise InputError("need one weight per estimator and at least one estimator")
    for e in estimators[1:]:
        _same_table(estimators[0], e)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise InputError("weights must be non-negative with a positive sum")
    w = w / w.sum()
    acc = w[0] * estimators[0].pw
    for wk, e in zip(w[1:], estimators[1:]):
        acc = acc + wk * e.pw
    return estimators[0].with_pw(acc)


@dataclass(frozen=True)
class TrainerConfig:
    method: str = "direct"      # "direct" or "sgd"
    epochs: int = 50
    lr: float = 0.05
    batch: int = 32
    seed: int = 0
    loss: str = "cce"           # sgd only; direct always fits squared error
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self):
        if self.method not in ("direct", "sgd"):
            raise InputError(f"unknown training method {self.method!r}")
        if self.loss not in LOSSES:
            raise InputError(f"unknown loss {self.loss!r}")


def train_estimator(est: LinearEstimator, data: Dataset, ps: PatternSet, cfg: TrainerConfig) -> LinearEstimator:
    if cfg.method == "direct":
        return estimator_direct_solve(est.table, data, ps, cfg.ridge)
    trained, _ = estimator_sgd_train(est, data, ps, cfg.epochs, cfg.lr, cfg.batch, cfg.seed, cfg.loss)
    return trained


def incremental_retrain(
    old: LinearEstimator,
    new_data: Dataset,
    ps_new: PatternSet,
    n_old: int,
    m_new: int,
    trainer: TrainerConfig,
) -> LinearEstimator:
    """Train a copy of ``old`` on the new samples only, then merge with
    weight ``n_old / (n_old + m_new)`` on the old model."""
    if n_old < 0 or m_new < 0 or n_old + m_new == 0:
        raise InputError("sample counts must be non-negative with a positive total")
    if m_new == 0:
        return old
    if m_new != len(new_data):
        raise InputError(f"m_new={m_new} but {len(new_data)} new samples were given")
    fresh = train_estimator(old, new_data, ps_new, trainer)
    return merge_estimators(old, fresh, n_old / (n_old + m_new))


def shard_id(data: Dataset) -> str:
    """Content digest used to order shards independently of list position."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.features).tobytes())
    h.update(np.ascontiguousarray(data.labels).tobytes())
    h.update(str(data.features.shape).encode())
    return h.hexdigest()


def federated_round(
    global_est: LinearEstimator,
    shards: Sequence[tuple[Dataset, PatternSet]],
    trainer: TrainerConfig,
    workers: int = 1,
) -> LinearEstimator:
    """Each node trains a copy of ``global_est`` on its shard; the coordinator
    returns the shard-size weighted average, folded in shard-id order."""
    if not shards:
        raise InputError("federated round needs at least one shard")
    for data, ps in shards:
        _check(global_est.table, data, ps)
    order = sorted(range(len(shards)), key=lambda k: shard_id(shards[k][0]))

    def node(k: int) -> LinearEstimator:
        data, ps = shards[k]
        return train_estimator(global_est, data, ps, trainer)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            local = list(pool.map(node, order))
    else:
        local = [node(k) for k in order]
    sizes = [len(shards[k][0]) for k in order]
    if sum(sizes) == 0:
        raise InputError("all shards are empty")
    return weighted_average(local, sizes)

