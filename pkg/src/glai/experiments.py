"""Multi-step workflows shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_nn import Network, evaluate, train_epochs
from .data_io import Dataset
from .errors import InputError
from .linear_estimator import TrainerConfig, estimator_direct_solve, estimator_evaluate, incremental_retrain
from .path_algebra import enumerate_paths
from .path_selector import PatternSet, capture_patterns, extend_patterns
from .poc_estimator import masked_evaluate, retrain_quantitative


def size_schedule(n_initial: int, increment: int, cap: int) -> list[int]:
    """Training-set sizes after each increment: n+inc, n+2inc, ... up to cap.

    The last entry is ``cap`` itself even when it is not a whole number of
    increments away.
    """
    if n_initial < 1 or increment < 1 or cap <= n_initial:
        raise InputError("need n_initial >= 1, increment >= 1 and cap > n_initial")
    sizes = list(range(n_initial + increment, cap + 1, increment))
    if not sizes or sizes[-1] != cap:
        sizes.append(cap)
    return sizes


@dataclass
class RetrainRow:
    n_samples: int
    quant_val_loss: float
    quant_val_accuracy: float
    sgd_val_loss: float | None = None
    sgd_val_accuracy: float | None = None


def retraining_comparison(
    selector: Network,
    estimator: Network,
    train: Dataset,
    val: Dataset,
    sizes: list[int],
    epochs: int,
    lr: float,
    batch: int,
    seed: int,
    baseline: bool = True,
    patterns: PatternSet | None = None,
) -> list[RetrainRow]:
    """Quantitative-only re-training on growing prefixes of ``train``.

    Each size starts again from ``estimator`` and uses the first ``size``
    samples. Patterns come from the frozen ``selector`` and are extended
    with the new samples only. With ``baseline`` the same start network is
    also trained traditionally on the same samples.
    """
    if sizes and sizes[-1] > len(train):
        raise InputError(f"schedule needs {sizes[-1]} samples but only {len(train)} are available")
    ps = patterns if patterns is not None else PatternSet.empty(selector.spec.layer_sizes)
    if len(ps) > len(train):
        raise InputError("more patterns than training samples")
    val_ps = capture_patterns(selector, val)
    rows = []
    for n in sizes:
        if n > len(ps):
            ps = extend_patterns(selector, ps, train.subset(np.arange(len(ps), n)))
        data = train.head(n)
        q, _ = retrain_quantitative(estimator, data, ps.subset(np.arange(n)), epochs, lr, batch, seed)
        row = RetrainRow(n, *masked_evaluate(q, val, val_ps))
        if baseline:
            g, _ = train_epochs(estimator, data, epochs, lr, batch, seed)
            row.sgd_val_loss, row.sgd_val_accuracy = evaluate(g, val)
        rows.append(row)
    return rows


@dataclass
class MergeReport:
    old_accuracy: float
    merged_accuracy: float
    union_accuracy: float


def merge_versus_union(
    selector: Network,
    old: Dataset,
    new: Dataset,
    val: Dataset,
    ridge: float,
) -> MergeReport:
    """Incremental direct-solve re-training against one solve on old+new."""
    table = enumerate_paths(selector.spec)
    ps_old, ps_new = capture_patterns(selector, old), capture_patterns(selector, new)
    val_ps = capture_patterns(selector, val)
    first = estimator_direct_solve(table, old, ps_old, ridge)
    merged = incremental_retrain(first, new, ps_new, len(old), len(new), TrainerConfig(ridge=ridge))
    union = estimator_direct_solve(table, old.concat(new), ps_old.concat(ps_new), ridge)
    return MergeReport(
        estimator_evaluate(first, val, val_ps)[1],
        estimator_evaluate(merged, val, val_ps)[1],
        estimator_evaluate(union, val, val_ps)[1],
    )
