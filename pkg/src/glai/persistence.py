"""Line-oriented text format for networks, pattern sets and estimators.

Every file starts with ``GLAI/1 <kind>`` followed by ``spec <sizes...>``.
Floats are written with ``repr`` (shortest string that round-trips), so
``load(save(x))`` is bit-exact and saving twice gives identical bytes.

network::

    GLAI/1 network
    spec 2 3 2
    seed 7
    weights 0 3 2        # layer, rows, cols; then `rows` lines of `cols` values
    ...
    biases 0 3           # layer, length; then one line of values
    ...

patterns::

    GLAI/1 patterns
    spec 2 3 2
    masks 5              # samples; then one 0/1 string per sample per hidden layer

estimator::

    GLAI/1 estimator
    spec 2 3 2
    pw 20                # path count; then one value per line, canonical path order
"""

from __future__ import annotations

import math

import numpy as np

from .core_nn import Network, NetworkSpec
from .errors import ConfigurationError, FormatError, VersionError
from .fileio import write_text_atomic
from .path_algebra import LinearEstimator, enumerate_paths
from .path_selector import PatternSet

MAGIC = "GLAI"
VERSION = 1
KINDS = ("network", "patterns", "estimator")


def _fmt(v: float) -> str:
    return repr(float(v))


def _spec_line(sizes) -> str:
    return "spec " + " ".join(str(s) for s in sizes)


def dumps(obj) -> str:
    if isinstance(obj, Network):
        lines = [f"{MAGIC}/{VERSION} network", _spec_line(obj.spec.layer_sizes), f"seed {obj.spec.seed}"]
        for l, (W, b) in enumerate(zip(obj.weights, obj.biases)):
            r, c = W.shape
            lines.append(f"weights {l} {r} {c}")
            lines.extend(" ".join(_fmt(v) for v in row) for row in W.tolist())
            lines.append(f"biases {l} {len(b)}")
            lines.append(" ".join(_fmt(v) for v in b.tolist()))
    elif isinstance(obj, PatternSet):
        lines = [f"{MAGIC}/{VERSION} patterns", _spec_line(obj.layer_sizes), f"masks {len(obj)}"]
        rows = [m.astype(np.uint8) for m in obj.layer_masks]
        for i in range(len(obj)):
            for m in rows:
                lines.append("".join("1" if v else "0" for v in m[i].tolist()))
    elif isinstance(obj, LinearEstimator):
        lines = [f"{MAGIC}/{VERSION} estimator", _spec_line(obj.table.layer_sizes), f"pw {len(obj.pw)}"]
        lines.extend(_fmt(v) for v in obj.pw.tolist())
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    return "\n".join(lines) + "\n"


def save(obj, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    write_text_atomic(path, dumps(obj))


class _Reader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    @property
    def lineno(self) -> int:
        return self.pos + 1

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise FormatError(f"unexpected end of file, expected {what}", self.lineno)
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def header(self, keyword: str, arity: int) -> list[int]:
        line = self.next(f"'{keyword}' line")
        parts = line.split()
        if not parts or parts[0] != keyword:
            raise FormatError(f"expected '{keyword}', found {line!r}", self.pos)
        if arity >= 0 and len(parts) - 1 != arity:
            raise FormatError(f"'{keyword}' takes {arity} fields, found {len(parts) - 1}", self.pos)
        try:
            return [int(p) for p in parts[1:]]
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", self.pos) from None

    def floats(self, count: int, what: str) -> list[float]:
        line = self.next(what)
        parts = line.split()
        if len(parts) != count:
            raise FormatError(f"{what}: expected {count} values, found {len(parts)}", self.pos)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{what}: non-numeric value", self.pos) from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{what}: non-finite value", self.pos)
        return vals

    def block(self, rows: int, cols: int, what: str) -> list[list[float]]:
        out = []
        for r in range(rows):
            if self.pos >= len(self.lines) or self.lines[self.pos].split()[:1] in (["weights"], ["biases"]):
                raise FormatError(f"{what}: expected {rows} rows, found {r}", self.lineno)
            out.append(self.floats(cols, what))
        return out

    def end(self) -> None:
        while self.pos < len(self.lines):
            if self.lines[self.pos].strip():
                raise FormatError(f"unexpected trailing content {self.lines[self.pos]!r}", self.lineno)
            self.pos += 1


def loads(text: str):
    rd = _Reader(text)
    first = rd.next("magic line").split()
    if len(first) != 2 or "/" not in first[0]:
        raise FormatError(f"bad magic line {' '.join(first)!r}", 1)
    magic, _, version = first[0].partition("/")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 1)
    if version != str(VERSION):
        raise VersionError(f"unsupported format version {version!r}, this build reads {VERSION}", 1)
    kind = first[1]
    if kind not in KINDS:
        raise FormatError(f"unknown object kind {kind!r}", 1)
    sizes = rd.header("spec", -1)
    try:
        NetworkSpec(tuple(sizes))
    except ConfigurationError as exc:
        raise FormatError(str(exc), rd.pos) from None

    if kind == "network":
        (seed,) = rd.header("seed", 1)
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            ln, r, c = rd.header("weights", 3)
            if (ln, r, c) != (l, sizes[l + 1], sizes[l]):
                raise FormatError(
                    f"expected 'weights {l} {sizes[l + 1]} {sizes[l]}', found 'weights {ln} {r} {c}'", rd.pos
                )
            weights.append(np.array(rd.block(r, c, f"weights {l}"), dtype=np.float64).reshape(r, c))
            ln, n = rd.header("biases", 2)
            if (ln, n) != (l, sizes[l + 1]):
                raise FormatError(f"expected 'biases {l} {sizes[l + 1]}', found 'biases {ln} {n}'", rd.pos)
            biases.append(np.array(rd.floats(n, f"biases {l}"), dtype=np.float64))
        rd.end()
        try:
            return Network(NetworkSpec(tuple(sizes), seed), tuple(weights), tuple(biases))
        except ConfigurationError as exc:
            raise FormatError(str(exc), 3) from None

    if kind == "patterns":
        (n,) = rd.header("masks", 1)
        hidden = sizes[1:-1]
        layers = [np.zeros((n, h), dtype=bool) for h in hidden]
        for i in range(n):
            for t, h in enumerate(hidden):
                line = rd.next(f"mask for sample {i}, layer {t + 1}").strip()
                if len(line) != h or set(line) - {"0", "1"}:
                    raise FormatError(f"expected a 0/1 string of length {h}, found {line!r}", rd.pos)
                layers[t][i] = np.frombuffer(line.encode(), dtype=np.uint8) == ord("1")
        rd.end()
        return PatternSet(sizes, layers)

    (n,) = rd.header("pw", 1)
    table = enumerate_paths(sizes)
    if n != len(table):
        raise FormatError(f"architecture has {len(table)} paths but file declares {n}", rd.pos)
    pw = [rd.floats(1, "path weight")[0] for _ in range(n)]
    rd.end()
    return LinearEstimator(table, np.array(pw))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
