"""Command line entry point: ``glai <subcommand> [--config FILE] [flags]``.

Settings resolve as flag > config file > built-in default. A config file
holds ``key = value`` lines (``#`` starts a comment); keys are the flag
names with underscores, e.g. ``merge_alpha = 0.7``. Unknown keys are an
error. ``GLAI_THREADS`` caps BLAS threads and federated worker count.

Every output file is written only after all computation has finished, and
all outputs of one command appear together or not at all.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import persistence
from .core_nn import Network, NetworkSpec, evaluate, init_network, train_epochs
from .data_io import Dataset, dumps_csv, load_csv, split, synth_clusters
from .errors import ConfigurationError, GlaiError, InputError
from .experiments import retraining_comparison, size_schedule
from .fileio import write_all
from .linear_estimator import (
    TrainerConfig,
    estimator_direct_solve,
    estimator_evaluate,
    estimator_sgd_train,
    federated_round,
    merge_estimators,
)
from .path_algebra import DEFAULT_PATH_CAP, LinearEstimator, init_estimator_from_network
from .path_selector import PatternSet, capture_patterns, pattern_diff
from .poc_estimator import masked_evaluate, retrain_quantitative

METRICS_HEADER = ["epoch", "split", "loss", "accuracy", "pattern_diff"]
SUMMARY_HEADER = ["n_samples", "quant_val_loss", "quant_val_accuracy", "sgd_val_loss", "sgd_val_accuracy"]

INITIAL_EPOCHS = 200
RETRAIN_EPOCHS = 50


def _spec(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigurationError(f"bad spec {text!r}; expected sizes like 8,32,16,10") from None
    return NetworkSpec(sizes).layer_sizes


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


# key -> (parser, default)
KEYS = {
    "spec": (_spec, None),
    "seed": (int, 0),
    "lr": (float, 0.05),
    "epochs": (int, None),
    "batch": (int, 32),
    "ridge": (float, 1e-8),
    "merge_alpha": (float, 0.5),
    "nodes": (int, 4),
    "rounds": (int, 1),
    "method": (str, "direct"),
    "loss": (str, "cce"),
    "metric": (str, "neuron"),
    "cap": (int, 8192),
    "path_cap": (int, DEFAULT_PATH_CAP),
    "n_initial": (int, 1024),
    "increment": (int, 1024),
    "baseline": (_bool, False),
    "classes": (int, 10),
    "dims": (int, 8),
    "per_class": (int, 1024),
    "spread": (float, 0.3),
    "fraction": (float, 0.8),
    # file paths
    "train": (str, None),
    "val": (str, None),
    "data": (str, None),
    "selector": (str, None),
    "estimator": (str, None),
    "model": (str, None),
    "patterns": (str, None),
    "a": (str, None),
    "b": (str, None),
    "out": (str, None),
    "metrics": (str, None),
    "summary": (str, None),
    "baseline_out": (str, None),
}

HELP = {
    "spec": "layer sizes, e.g. 8,32,16,10",
    "seed": "seed for initialisation and shuffling",
    "lr": "learning rate",
    "epochs": "training epochs",
    "batch": "mini-batch size",
    "ridge": "ridge term for the direct solve",
    "merge_alpha": "weight of --a in the merge",
    "nodes": "number of shards",
    "rounds": "federated rounds",
    "method": "direct or sgd",
    "loss": "cce or mse",
    "metric": "pattern distance: neuron or path",
    "cap": "largest training-set size in the schedule",
    "path_cap": "refuse to enumerate more paths than this",
    "n_initial": "samples used by the first training phase",
    "increment": "samples added per schedule step",
    "classes": "number of clusters",
    "dims": "input dimension",
    "per_class": "samples per cluster",
    "spread": "cluster standard deviation",
    "fraction": "share of samples kept for training",
    "train": "training CSV",
    "val": "validation CSV",
    "data": "input CSV",
    "selector": "saved selector network",
    "estimator": "saved starting estimator",
    "model": "saved network or estimator",
    "patterns": "saved activation patterns",
    "a": "first estimator",
    "b": "second estimator",
    "out": "output file",
    "metrics": "per-epoch metrics CSV",
    "summary": "per-size summary CSV; switches to the size schedule",
    "baseline_out": "file for the traditionally trained network",
}


def read_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise ConfigurationError(f"{path}: line {no}: expected 'key = value'")
            if key not in KEYS:
                raise ConfigurationError(f"{path}: line {no}: unknown key {key!r}")
            if key in values:
                raise ConfigurationError(f"{path}: line {no}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


class Settings:
    """Resolved settings for one command."""

    def __init__(self, args: argparse.Namespace, file_values: dict[str, str], defaults: dict):
        self._args = args
        self._file = file_values
        self._defaults = defaults

    def get(self, key: str, required: bool = False):
        parse, default = KEYS[key]
        value = getattr(self._args, key, None)
        if value is None and key in self._file:
            try:
                value = parse(self._file[key])
            except ValueError:
                raise ConfigurationError(f"bad value for {key!r}: {self._file[key]!r}") from None
        if value is None:
            value = self._defaults.get(key, default)
        if value is None and required:
            raise ConfigurationError(f"missing required setting {key!r} (flag --{key.replace('_', '-')})")
        return value

    __getitem__ = get


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _num(v) -> str:
    return "" if v is None else repr(float(v))


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for epoch, split_name, loss, acc, diff in rows:
        w.writerow([epoch, split_name, _num(loss), _num(acc), _num(diff)])
    return buf.getvalue()


def history_rows(history, prefix: str = "", diffs: dict | None = None) -> list:
    rows = []
    for rec in history:
        rows.append((rec.epoch, prefix + "train", rec.train_loss, rec.train_accuracy, None))
        if rec.val_loss is not None:
            d = diffs.get(rec.epoch) if diffs else None
            rows.append((rec.epoch, prefix + "val", rec.val_loss, rec.val_accuracy, d))
    return rows


def _load(path, kind):
    obj = persistence.load(path)
    if not isinstance(obj, kind):
        raise InputError(f"{path} holds a {type(obj).__name__}, expected {kind.__name__}")
    return obj


def _dataset(path) -> Dataset:
    return load_csv(path)


def _with_classes(data: Dataset, n_out: int) -> Dataset:
    """Labels must fit the model's outputs; widen n_classes to match."""
    if data.n_classes > n_out:
        raise InputError(f"dataset has {data.n_classes} classes but the model has {n_out} outputs")
    return Dataset(data.features, data.labels, n_out)


def _maybe(path, loader):
    return loader(path) if path else None


def _patterns_for(selector: Network, data: Dataset, patterns_path) -> PatternSet:
    if patterns_path:
        ps = _load(patterns_path, PatternSet)
        ps.check_aligned(data, selector.spec.layer_sizes)
        return ps
    return capture_patterns(selector, data)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_gen_data(s: Settings) -> dict:
    data = synth_clusters(s["seed"], s["classes"], s["dims"], s["per_class"], s["spread"])
    train, val = split(data, s["fraction"], s["seed"])
    return {s.get("train", True): dumps_csv(train), s.get("val", True): dumps_csv(val)}


def cmd_train_initial(s: Settings) -> dict:
    spec = NetworkSpec(s.get("spec", True), s["seed"])
    train = _with_classes(_dataset(s.get("train", True)), spec.n_outputs)
    n = s.get("n_initial")
    if n is not None and n < len(train):
        train = train.head(n)
    val = _maybe(s["val"], _dataset)
    if val is not None:
        val = _with_classes(val, spec.n_outputs)
    net = init_network(spec)
    diffs = {}
    if val is not None:
        prev = [capture_patterns(net, val)]

        def on_epoch(n_, rec):
            cur = capture_patterns(n_, val)
            diffs[rec.epoch] = pattern_diff(prev[0], cur)
            prev[0] = cur
    else:
        on_epoch = None
    net, hist = train_epochs(net, train, s["epochs"], s["lr"], s["batch"], s["seed"], val=val, on_epoch=on_epoch)
    text = persistence.dumps(net)
    out = {s.get("selector", True): text, s.get("estimator", True): text}
    if s["metrics"]:
        out[s["metrics"]] = metrics_csv(history_rows(hist, diffs=diffs))
    return out


def cmd_capture_patterns(s: Settings) -> dict:
    sel = _load(s.get("selector", True), Network)
    data = _dataset(s.get("data", True))
    return {s.get("out", True): persistence.dumps(capture_patterns(sel, data))}


def cmd_retrain_poc(s: Settings) -> dict:
    sel = _load(s.get("selector", True), Network)
    est = _load(s.get("estimator", True), Network)
    if est.spec.layer_sizes != sel.spec.layer_sizes:
        raise InputError("selector and estimator have different architectures")
    n_out = sel.spec.n_outputs
    train = _with_classes(_dataset(s.get("train", True)), n_out)
    val = _maybe(s["val"], _dataset)
    if val is not None:
        val = _with_classes(val, n_out)
    epochs, lr, batch, seed = s["epochs"], s["lr"], s["batch"], s["seed"]

    if s["summary"]:
        if val is None:
            raise ConfigurationError("the increment schedule needs --val")
        sizes = size_schedule(s["n_initial"], s["increment"], min(s["cap"], len(train)))
        pre = _load(s["patterns"], PatternSet) if s["patterns"] else None
        rows = retraining_comparison(sel, est, train, val, sizes, epochs, lr, batch, seed, s["baseline"], pre)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r.n_samples, _num(r.quant_val_loss), _num(r.quant_val_accuracy),
                        _num(r.sgd_val_loss), _num(r.sgd_val_accuracy)])
        return {s["summary"]: buf.getvalue()}

    ps = _patterns_for(sel, train, s["patterns"])
    val_ps = capture_patterns(sel, val) if val is not None else None
    q, hist = retrain_quantitative(est, train, ps, epochs, lr, batch, seed, val, val_ps)
    out = {s.get("out", True): persistence.dumps(q)}
    rows = history_rows(hist)
    if s["baseline"]:
        g, ghist = train_epochs(est, train, epochs, lr, batch, seed, val=val)
        rows += history_rows(ghist, prefix="baseline_")
        if s["baseline_out"]:
            out[s["baseline_out"]] = persistence.dumps(g)
    if s["metrics"]:
        out[s["metrics"]] = metrics_csv(sorted(rows, key=lambda r: r[0]))
    return out


def cmd_pattern_trace(s: Settings) -> dict:
    from .path_selector import convergence_trace

    spec = NetworkSpec(s.get("spec", True), s["seed"])
    train = _with_classes(_dataset(s.get("train", True)), spec.n_outputs)
    val = _with_classes(_dataset(s.get("val", True)), spec.n_outputs)
    trace = convergence_trace(spec, train, val, s["epochs"], s["lr"], s["batch"], s["seed"], s["metric"])
    rows = []
    for r in trace:
        rows.append((r.epoch, "train", r.train_loss, r.train_accuracy, None))
        rows.append((r.epoch, "val", r.val_loss, r.val_accuracy, r.diff))
    return {s.get("out", True): metrics_csv(rows)}


def cmd_build_estimator(s: Settings) -> dict:
    sel = _load(s.get("selector", True), Network)
    return {s.get("out", True): persistence.dumps(init_estimator_from_network(sel, s["path_cap"]))}


def _trainer(s: Settings) -> TrainerConfig:
    return TrainerConfig(
        method=s["method"], epochs=s["epochs"], lr=s["lr"], batch=s["batch"],
        seed=s["seed"], loss=s["loss"], ridge=s["ridge"],
    )


def cmd_train_estimator(s: Settings) -> dict:
    est = _load(s.get("estimator", True), LinearEstimator)
    sel = _load(s.get("selector", True), Network)
    if sel.spec.layer_sizes != est.layer_sizes:
        raise InputError("selector and estimator have different architectures")
    train = _with_classes(_dataset(s.get("train", True)), est.outputs)
    ps = _patterns_for(sel, train, s["patterns"])
    val = _maybe(s["val"], _dataset)
    val_ps = None
    if val is not None:
        val = _with_classes(val, est.outputs)
        val_ps = capture_patterns(sel, val)
    cfg = _trainer(s)
    if cfg.method == "direct":
        trained = estimator_direct_solve(est.table, train, ps, cfg.ridge)
        rows = [(1, "train", *estimator_evaluate(trained, train, ps), None)]
        if val is not None:
            rows.append((1, "val", *estimator_evaluate(trained, val, val_ps), None))
    else:
        trained, hist = estimator_sgd_train(
            est, train, ps, cfg.epochs, cfg.lr, cfg.batch, cfg.seed, cfg.loss, val, val_ps
        )
        rows = history_rows(hist)
    out = {s.get("out", True): persistence.dumps(trained)}
    if s["metrics"]:
        out[s["metrics"]] = metrics_csv(rows)
    return out


def cmd_merge(s: Settings) -> dict:
    a = _load(s.get("a", True), LinearEstimator)
    b = _load(s.get("b", True), LinearEstimator)
    return {s.get("out", True): persistence.dumps(merge_estimators(a, b, s["merge_alpha"]))}


def cmd_federated_sim(s: Settings) -> dict:
    est = _load(s.get("estimator", True), LinearEstimator)
    sel = _load(s.get("selector", True), Network)
    if sel.spec.layer_sizes != est.layer_sizes:
        raise InputError("selector and estimator have different architectures")
    train = _with_classes(_dataset(s.get("train", True)), est.outputs)
    k = s["nodes"]
    if k < 1 or k > len(train):
        raise ConfigurationError(f"nodes must be between 1 and {len(train)}")
    order = np.random.default_rng(s["seed"]).permutation(len(train))
    shards = []
    for part in np.array_split(order, k):
        part = np.sort(part)
        d = train.subset(part)
        shards.append((d, capture_patterns(sel, d)))
    val = _maybe(s["val"], _dataset)
    val_ps = None
    if val is not None:
        val = _with_classes(val, est.outputs)
        val_ps = capture_patterns(sel, val)
    cfg = _trainer(s)
    ps_all = capture_patterns(sel, train)
    rows = []
    for rnd in range(1, s["rounds"] + 1):
        est = federated_round(est, shards, cfg, workers=_threads() or 1)
        rows.append((rnd, "train", *estimator_evaluate(est, train, ps_all), None))
        if val is not None:
            rows.append((rnd, "val", *estimator_evaluate(est, val, val_ps), None))
    out = {s.get("out", True): persistence.dumps(est)}
    if s["metrics"]:
        out[s["metrics"]] = metrics_csv(rows)
    return out


def cmd_eval(s: Settings) -> dict:
    model = persistence.load(s.get("model", True))
    data = _dataset(s.get("data", True))
    sel_path = s["selector"]
    if isinstance(model, Network):
        data = _with_classes(data, model.spec.n_outputs)
        if sel_path:
            sel = _load(sel_path, Network)
            loss, acc = masked_evaluate(model, data, _patterns_for(sel, data, s["patterns"]))
        else:
            loss, acc = evaluate(model, data)
    elif isinstance(model, LinearEstimator):
        data = _with_classes(data, model.outputs)
        if not sel_path and not s["patterns"]:
            raise ConfigurationError("evaluating an estimator needs --selector or --patterns")
        if sel_path:
            ps = _patterns_for(_load(sel_path, Network), data, s["patterns"])
        else:
            ps = _load(s["patterns"], PatternSet)
        loss, acc = estimator_evaluate(model, data, ps)
    else:
        raise InputError(f"{s['model']} holds a pattern set, not a model")
    print(f"loss {loss!r}")
    print(f"accuracy {acc!r}")
    return {}


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic Gaussian-cluster train/val pair",
                 ["seed", "classes", "dims", "per_class", "spread", "fraction", "train", "val"], {}),
    "train-initial": (cmd_train_initial, "train a network and save selector and estimator copies",
                      ["spec", "seed", "lr", "epochs", "batch", "n_initial", "train", "val",
                       "selector", "estimator", "metrics"],
                      {"epochs": INITIAL_EPOCHS, "n_initial": None}),
    "capture-patterns": (cmd_capture_patterns, "save activation patterns of a dataset",
                         ["selector", "data", "out"], {}),
    "retrain-poc": (cmd_retrain_poc, "quantitative-only re-training of the masked network",
                    ["seed", "lr", "epochs", "batch", "selector", "estimator", "train", "val", "patterns",
                     "out", "metrics", "baseline", "baseline_out", "summary", "n_initial", "increment", "cap"],
                    {"epochs": RETRAIN_EPOCHS}),
    "pattern-trace": (cmd_pattern_trace, "per-epoch activation pattern change on the validation set",
                      ["spec", "seed", "lr", "epochs", "batch", "metric", "train", "val", "out"],
                      {"epochs": RETRAIN_EPOCHS}),
    "build-estimator": (cmd_build_estimator, "path-weight estimator initialised from a network",
                        ["selector", "out", "path_cap"], {}),
    "train-estimator": (cmd_train_estimator, "fit path weights by SGD or direct least squares",
                        ["method", "seed", "lr", "epochs", "batch", "loss", "ridge", "estimator", "selector",
                         "train", "val", "patterns", "out", "metrics"],
                        {"epochs": RETRAIN_EPOCHS}),
    "merge": (cmd_merge, "parameter-wise weighted average of two estimators",
              ["a", "b", "merge_alpha", "out"], {}),
    "federated-sim": (cmd_federated_sim, "simulate federated rounds over K shards",
                      ["nodes", "rounds", "method", "seed", "lr", "epochs", "batch", "loss", "ridge",
                       "estimator", "selector", "train", "val", "out", "metrics"],
                      {"epochs": RETRAIN_EPOCHS}),
    "eval": (cmd_eval, "loss and accuracy of a saved network or estimator",
             ["model", "data", "selector", "patterns"], {}),
}


def _flag_type(key):
    parse, _ = KEYS[key]

    def conv(text):
        try:
            return parse(text)
        except (ValueError, GlaiError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    conv.__name__ = getattr(parse, "__name__", key)
    return conv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glai", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, keys, defaults) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value settings file")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            if key == "baseline":
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                               help="also run traditional SGD from the same start")
                continue
            default = defaults.get(key, KEYS[key][1])
            hint = f" (default {default})" if default is not None else ""
            p.add_argument(flag, dest=key, type=_flag_type(key), default=None, help=HELP.get(key, key.replace("_", " ")) + hint)
    return parser


def _threads() -> int | None:
    raw = os.environ.get("GLAI_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"GLAI_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"GLAI_THREADS must be a positive integer, got {raw!r}")
    return n


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, _, _, defaults = COMMANDS[args.command]
    try:
        file_values = read_config(args.config) if args.config else {}
        settings = Settings(args, file_values, defaults)
        threads = _threads()
        if threads:
            with threadpool_limits(limits=threads):
                outputs = func(settings)
        else:
            outputs = func(settings)
        for path in outputs:
            parent = Path(path).parent
            if not parent.is_dir():
                raise InputError(f"output directory {parent} does not exist")
        write_all(outputs)
    except (GlaiError, OSError, ValueError) as exc:
        print(f"glai {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
