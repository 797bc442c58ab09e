"""Paths through a dense ReLU network and the path-sum output formula.

A *full* path runs from an input through one neuron of every hidden layer
to an output. A *bias* path starts at the bias of a hidden neuron (or of an
output neuron, giving an empty route) and runs through one neuron of every
later hidden layer to an output. The network output is the sum, over the
paths that are active for a sample, of ``pw * x[source]`` (full paths) or
``pw`` (bias paths), where ``pw`` is the product of weights along the path.

Paths are ordered lexicographically by ``(kind, source, route, output)``
with full paths first. The output index is the innermost coordinate, so
path ``k`` leads to output ``k % O`` and paths ``k // O`` sharing a prefix
form a *stem*: the output-independent part of a path. Stems carry the
activity and input value; a table of ``S`` stems has ``S * O`` paths and the
path-sum reduces to a matrix product ``features (B, S) @ pw (S, O)``.

Layer numbering follows ``layer_sizes``: index 0 is the input layer,
1..L the hidden layers and L+1 the output layer. A bias path's ``source``
is ``(layer, neuron)`` in that numbering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_nn import Network, NetworkSpec, spec_fingerprint
from .errors import CapacityError, InputError
from .path_selector import ActivationPattern, PatternSet

DEFAULT_PATH_CAP = 10**6

FULL = "full"
BIAS = "bias"


@dataclass(frozen=True)
class PathId:
    kind: str                       # FULL or BIAS
    source: int | tuple[int, int]   # input index, or (layer, neuron) of the bias
    route: tuple[int, ...]          # hidden neuron per traversed hidden layer
    output: int

    def sort_key(self) -> tuple:
        src = (self.source,) if self.kind == FULL else tuple(self.source)
        return (0 if self.kind == FULL else 1, src, self.route, self.output)


def _sizes(spec) -> tuple[int, ...]:
    if isinstance(spec, NetworkSpec):
        return spec.layer_sizes
    return NetworkSpec(tuple(spec)).layer_sizes


def path_counts(spec) -> tuple[int, int]:
    """Closed-form ``(full, bias)`` path counts of an architecture."""
    sizes = _sizes(spec)
    hidden, O = sizes[1:-1], sizes[-1]
    full = sizes[0] * math.prod(hidden) * O
    bias = sum(h * math.prod(hidden[t + 1:]) * O for t, h in enumerate(hidden)) + O
    return full, bias


class PathTable:
    """All paths of an architecture, in canonical order, stored as stems."""

    def __init__(self, layer_sizes: Sequence[int], cap: int = DEFAULT_PATH_CAP):
        sizes = _sizes(layer_sizes)
        full, bias = path_counts(sizes)
        if full + bias > cap:
            raise CapacityError(full + bias, cap)
        self.layer_sizes = sizes
        self.cap = cap
        I, hidden, O = sizes[0], sizes[1:-1], sizes[-1]
        L = len(hidden)

        kinds, layers, sources, touches = [], [], [], []
        # full stems: (i, r_1..r_L) in lexicographic order
        grid = np.indices((I, *hidden)).reshape(L + 1, -1).T
        kinds.append(np.zeros(len(grid), dtype=np.int8))
        layers.append(np.zeros(len(grid), dtype=np.int64))
        sources.append(grid[:, 0])
        touches.append(grid[:, 1:])
        # bias stems from hidden layer t: (n, r_{t+1}..r_L)
        for t in range(L):
            g = np.indices(hidden[t:]).reshape(L - t, -1).T
            touch = np.full((len(g), L), -1, dtype=np.int64)
            touch[:, t:] = g
            kinds.append(np.ones(len(g), dtype=np.int8))
            layers.append(np.full(len(g), t + 1, dtype=np.int64))
            sources.append(g[:, 0])
            touches.append(touch)
        # output biases: a single stem, one path per output
        kinds.append(np.ones(1, dtype=np.int8))
        layers.append(np.full(1, L + 1, dtype=np.int64))
        sources.append(np.full(1, -1, dtype=np.int64))
        touches.append(np.full((1, L), -1, dtype=np.int64))

        self.stem_kind = np.concatenate(kinds)
        self.stem_layer = np.concatenate(layers)
        self.stem_source = np.concatenate(sources).astype(np.int64)
        self.stem_touch = np.vstack(touches).astype(np.int64)
        for a in (self.stem_kind, self.stem_layer, self.stem_source, self.stem_touch):
            a.setflags(write=False)
        self.n_full = full
        self.n_bias = bias

    @property
    def spec_fingerprint(self) -> str:
        return spec_fingerprint(self.layer_sizes)

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_stems(self) -> int:
        return len(self.stem_kind)

    @property
    def n_full_stems(self) -> int:
        return self.n_full // self.n_outputs

    def __len__(self) -> int:
        return self.n_stems * self.n_outputs

    @property
    def outputs(self) -> np.ndarray:
        return np.tile(np.arange(self.n_outputs), self.n_stems)

    def path(self, k: int) -> PathId:
        if not 0 <= k < len(self):
            raise IndexError(k)
        s, j = divmod(k, self.n_outputs)
        touch = self.stem_touch[s]
        if self.stem_kind[s] == 0:
            return PathId(FULL, int(self.stem_source[s]), tuple(int(v) for v in touch), j)
        layer = int(self.stem_layer[s])
        if layer == len(self.layer_sizes) - 1:
            return PathId(BIAS, (layer, j), (), j)
        # touch[layer-1] is the source neuron itself; the route is what follows
        return PathId(BIAS, (layer, int(self.stem_source[s])), tuple(int(v) for v in touch[layer:]), j)

    __getitem__ = path

    @property
    def paths(self) -> list[PathId]:
        return [self.path(k) for k in range(len(self))]

    def index_of(self, p: PathId) -> int:
        validate_path(self.layer_sizes, p)
        I, hidden, O = self.layer_sizes[0], self.layer_sizes[1:-1], self.layer_sizes[-1]
        if p.kind == FULL:
            stem = int(np.ravel_multi_index((p.source, *p.route), (I, *hidden)))
        else:
            layer, neuron = p.source
            stem = self.n_full_stems
            for t in range(layer - 1):
                stem += math.prod(hidden[t:])
            if layer <= len(hidden):
                stem += int(np.ravel_multi_index((neuron, *p.route), hidden[layer - 1:]))
        return stem * O + p.output

    def stem_activity(self, ps: PatternSet | ActivationPattern) -> np.ndarray:
        """Boolean (B, S): a stem is active iff every hidden neuron it touches is."""
        masks = _masks(self.layer_sizes, ps)
        B = masks[0].shape[0] if masks else 1
        act = np.ones((B, self.n_stems), dtype=bool)
        for t, m in enumerate(masks):
            idx = self.stem_touch[:, t]
            sel = np.flatnonzero(idx >= 0)
            act[:, sel] &= m[:, idx[sel]]
        return act

    def stem_values(self, X: np.ndarray) -> np.ndarray:
        """(B, S) source values: the input for full stems, 1 for bias stems."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.layer_sizes[0]:
            raise InputError(f"input has {X.shape[1]} features, table expects {self.layer_sizes[0]}")
        vals = np.ones((X.shape[0], self.n_stems))
        nf = self.n_full_stems
        vals[:, :nf] = X[:, self.stem_source[:nf]]
        return vals

    def stem_features(self, X: np.ndarray, ps: PatternSet | ActivationPattern) -> np.ndarray:
        """Per-sample design row: source value on active stems, 0 elsewhere."""
        vals = self.stem_values(X)
        act = self.stem_activity(ps)
        if act.shape[0] != vals.shape[0]:
            raise InputError(f"{act.shape[0]} patterns for {vals.shape[0]} samples")
        return np.where(act, vals, 0.0)


def _masks(layer_sizes, ps) -> list[np.ndarray]:
    if isinstance(ps, ActivationPattern):
        ps.check(layer_sizes)
        return [m[None, :] for m in ps.masks]
    if isinstance(ps, PatternSet):
        if ps.layer_sizes != tuple(layer_sizes):
            raise InputError(
                f"patterns were captured for {list(ps.layer_sizes)}, table is {list(layer_sizes)}"
            )
        return list(ps.layer_masks)
    raise InputError(f"expected ActivationPattern or PatternSet, got {type(ps).__name__}")


def enumerate_paths(spec, cap: int = DEFAULT_PATH_CAP) -> PathTable:
    return PathTable(_sizes(spec), cap)


# --------------------------------------------------------------------------
# Single-path operations
# --------------------------------------------------------------------------

def validate_path(layer_sizes: Sequence[int], p: PathId) -> None:
    sizes = tuple(layer_sizes)
    hidden, O, L = sizes[1:-1], sizes[-1], len(sizes) - 2
    if not 0 <= p.output < O:
        raise InputError(f"output {p.output} out of range")
    if p.kind == FULL:
        if not isinstance(p.source, (int, np.integer)) or not 0 <= p.source < sizes[0]:
            raise InputError(f"input index {p.source!r} out of range")
        expect = hidden
    elif p.kind == BIAS:
        try:
            layer, neuron = p.source
        except (TypeError, ValueError):
            raise InputError("bias path source must be (layer, neuron)") from None
        if not 1 <= layer <= L + 1 or not 0 <= neuron < sizes[layer]:
            raise InputError(f"bias source {p.source} out of range")
        if layer == L + 1 and neuron != p.output:
            raise InputError("an output bias only reaches its own output")
        expect = hidden[layer:]
    else:
        raise InputError(f"unknown path kind {p.kind!r}")
    if len(p.route) != len(expect) or any(not 0 <= r < h for r, h in zip(p.route, expect)):
        raise InputError(f"route {p.route} invalid for hidden sizes {list(expect)}")


def path_weight(net: Network, p: PathId) -> float:
    """Product of the weights along ``p``; bias paths start from the source bias."""
    validate_path(net.spec.layer_sizes, p)
    L = net.n_layers - 1
    if p.kind == FULL:
        value, prev, first = 1.0, p.source, 0
    else:
        layer, neuron = p.source
        if layer == L + 1:
            return float(net.biases[L][neuron])
        value, prev, first = float(net.biases[layer - 1][neuron]), neuron, layer
    for w_idx, node in zip(range(first, L), p.route):
        value *= net.weights[w_idx][node, prev]
        prev = node
    value *= net.weights[L][p.output, prev]
    return float(value)


def path_active(p: PathId, pat: ActivationPattern) -> bool:
    """Every hidden neuron on the path (bias source included) must be active."""
    hidden = pat.hidden_sizes
    L = len(hidden)
    if p.kind == FULL:
        if len(p.route) != L:
            raise InputError(f"full path route {p.route} does not cross {L} hidden layers")
        nodes = list(enumerate(p.route))
    elif p.kind == BIAS:
        layer, neuron = p.source
        if not 1 <= layer <= L + 1 or len(p.route) != L + 1 - layer - (layer <= L):
            raise InputError(f"bias path {p} does not fit hidden sizes {list(hidden)}")
        if layer == L + 1:
            return True
        nodes = [(layer - 1, neuron)] + [(layer + t, r) for t, r in enumerate(p.route)]
    else:
        raise InputError(f"unknown path kind {p.kind!r}")
    for t, r in nodes:
        if not 0 <= r < hidden[t]:
            raise InputError(f"neuron {r} out of range in hidden layer {t + 1}")
    return all(bool(pat.masks[t][r]) for t, r in nodes)


def count_active_paths(table: PathTable, pat: ActivationPattern, i: int, j: int) -> int:
    """Number of active full paths from input ``i`` to output ``j``."""
    if not 0 <= i < table.layer_sizes[0] or not 0 <= j < table.n_outputs:
        raise InputError(f"(input {i}, output {j}) out of range")
    nf = table.n_full_stems
    act = table.stem_activity(pat)[0, :nf]
    return int(np.count_nonzero(act & (table.stem_source[:nf] == i)))


def path_pattern_diff(table: PathTable, a: PatternSet, b: PatternSet) -> float:
    """Fraction of (sample, path) activity flags that differ."""
    if len(a) != len(b):
        raise InputError(f"pattern sets have different lengths ({len(a)} vs {len(b)})")
    if len(a) == 0:
        return 0.0
    # every path of a stem shares its activity, so stem means equal path means
    return float(np.mean(table.stem_activity(a) != table.stem_activity(b)))


# --------------------------------------------------------------------------
# Linear estimator
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearEstimator:
    """One independent weight per path; ``pw[k]`` belongs to ``table.path(k)``."""

    table: PathTable
    pw: np.ndarray

    def __post_init__(self):
        pw = np.array(self.pw, dtype=np.float64).reshape(-1)
        if len(pw) != len(self.table):
            raise InputError(f"{len(pw)} path weights for {len(self.table)} paths")
        if not np.all(np.isfinite(pw)):
            raise InputError("path weights must be finite")
        pw.setflags(write=False)
        object.__setattr__(self, "pw", pw)

    @property
    def outputs(self) -> int:
        return self.table.n_outputs

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return self.table.layer_sizes

    @property
    def pw_matrix(self) -> np.ndarray:
        """(S, O) view: row per stem, column per output."""
        return self.pw.reshape(self.table.n_stems, self.table.n_outputs)

    def with_pw(self, pw) -> LinearEstimator:
        return LinearEstimator(self.table, pw)

    def equals(self, other: LinearEstimator) -> bool:
        return (
            self.table.layer_sizes == other.table.layer_sizes
            and self.pw.tobytes() == other.pw.tobytes()
        )


def stem_weight_matrix(net: Network, table: PathTable | None = None) -> np.ndarray:
    """(S, O) matrix of path weights, vectorised over all paths."""
    if table is None:
        table = enumerate_paths(net.spec)
    L = net.n_layers - 1
    S = table.n_stems
    touch, layer, src = table.stem_touch, table.stem_layer, table.stem_source
    prod = np.ones(S)
    inner = layer <= L  # stems that touch at least one hidden neuron
    nf = table.n_full_stems
    prod[:nf] = net.weights[0][touch[:nf, 0], src[:nf]]
    for t in range(L):
        rows = np.flatnonzero(layer == t + 1)
        prod[rows] = net.biases[t][src[rows]]
    for u in range(1, L):
        # hidden-to-hidden weight u links hidden layer u-1 to hidden layer u
        sel = np.flatnonzero(touch[:, u - 1] >= 0)
        prod[sel] *= net.weights[u][touch[sel, u], touch[sel, u - 1]]
    out = np.empty((S, net.spec.n_outputs))
    rows = np.flatnonzero(inner)
    out[rows] = prod[rows, None] * net.weights[L][:, touch[rows, L - 1]].T
    out[~inner] = net.biases[L][None, :]
    return out


def init_estimator_from_network(net: Network, cap: int = DEFAULT_PATH_CAP) -> LinearEstimator:
    """Path weights initialised to the weight products of ``net``."""
    table = enumerate_paths(net.spec, cap)
    return LinearEstimator(table, stem_weight_matrix(net, table).reshape(-1))


def estimator_outputs(est: LinearEstimator, X, ps: PatternSet | ActivationPattern) -> np.ndarray:
    """Batch path-sum outputs (B, O)."""
    return est.table.stem_features(X, ps) @ est.pw_matrix


def path_sum(est: LinearEstimator, pat: ActivationPattern, x) -> np.ndarray:
    """Outputs for one sample: sum over active paths of pw * x[source] or pw."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("path_sum takes a single sample")
    return estimator_outputs(est, x[None, :], pat)[0]
