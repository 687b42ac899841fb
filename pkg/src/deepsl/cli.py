"""Command-line interface: ``dsl <command> ...``.

Exit codes: 0 success, 1 unreadable or malformed input file, 2 invalid
configuration, 3 training aborted, 4 forward-pass failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import checkpoint, dataio, learner, selfcheck, slcore
from .config import RunConfig, load_config
from .errors import ConfigError, DSLError, TrainingAborted
from .learner import Normalization, TrainConfig
from .model import SolverConfig, forward_sample

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_ABORTED, EXIT_FORWARD = range(5)

PRECISION = {
    "standard": dict(tol_t=1e-4, tol_lambda=1e-4),
    "high": dict(tol_t=1e-8, tol_lambda=1e-8, rtol=1e-9, atol=1e-9),
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _apply_globals(cfg: TrainConfig, args) -> TrainConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.precision is not None:
        changes.update(PRECISION[args.precision])
    return replace(cfg, **changes)


def _read_config(path) -> RunConfig:
    try:
        return load_config(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from exc
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from exc


def _read_table(path, label_column, require_label=True) -> dataio.Table:
    try:
        return dataio.read_table(path, label_column, require_label)
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _load_checkpoint(path) -> checkpoint.Checkpoint:
    try:
        return checkpoint.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc}") from exc


def _solver_from(ckpt: checkpoint.Checkpoint, args) -> SolverConfig:
    cfg = TrainConfig(**(ckpt.train_config or {}))
    return _apply_globals(cfg, args).solver()


def _normalized(ckpt: checkpoint.Checkpoint, raw: np.ndarray) -> np.ndarray:
    if ckpt.normalization is None:
        return raw
    stats = Normalization(np.array(ckpt.normalization["mins"]), np.array(ckpt.normalization["maxs"]))
    return learner.normalize(raw, stats)[0]


def _split(ckpt_or_classes, table: dataio.Table, stats) -> learner.DatasetSplit:
    try:
        labels = dataio.encode_labels(table.labels, ckpt_or_classes)
    except ValueError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    return learner.make_split(table.features, labels, stats)


def cmd_train(args) -> int:
    run = _read_config(args.config)
    cfg = _apply_globals(run.train, args)
    if args.freeze_knot_positions:
        cfg = replace(cfg, freeze_knot_positions=True)
    train_t = _read_table(args.train, run.label_column)
    val_t = _read_table(args.val, run.label_column)
    if train_t.features.shape[0] == 0 or val_t.features.shape[0] == 0:
        raise CliError(EXIT_IO, "training and validation files need at least one row")
    if train_t.feature_names != val_t.feature_names:
        raise CliError(EXIT_IO, "training and validation files have different feature columns")
    classes = dataio.class_values(train_t.labels)
    train = _split(classes, train_t, None)
    val = _split(classes, val_t, train.normalization)
    try:
        result = learner.fit(cfg, train, val, n_classes=len(classes),
                             on_epoch=lambda r: print(f"epoch {r.epoch}: train loss {r.train_loss:.6f}, "
                                                      f"val accuracy {r.val_accuracy:.4f}, skipped {r.skipped}",
                                                      file=sys.stderr))
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    norm = {"mins": train.normalization.mins.tolist(), "maxs": train.normalization.maxs.tolist(),
            "feature_names": train_t.feature_names}
    ckpt = checkpoint.Checkpoint(checkpoint.FORMAT_VERSION, result.model, cfg.to_dict(), norm, classes,
                                 run.label_column)
    history = args.history or _history_path(args.out)
    try:
        checkpoint.save(args.out, ckpt)
        dataio.write_csv(history, ["epoch", "train_loss", "val_accuracy", "skipped"],
                         [(r.epoch, float(r.train_loss), float(r.val_accuracy), r.skipped)
                          for r in result.history])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write output: {exc}") from exc
    print(f"best epoch {result.best_epoch}; checkpoint {args.out}; history {history}", file=sys.stderr)
    return EXIT_OK


def _history_path(out: str) -> str:
    stem = out[:-5] if out.endswith(".ckpt") else out
    return stem + ".history.csv"


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint(args.model)
    table = _read_table(args.data, ckpt.label_column or "label")
    stats = None
    if ckpt.normalization is not None:
        stats = Normalization(np.array(ckpt.normalization["mins"]), np.array(ckpt.normalization["maxs"]))
    split = _split(ckpt.classes, table, stats) if ckpt.classes is not None else \
        learner.make_split(table.features, np.array([int(float(v)) for v in table.labels]), stats)
    kind = (ckpt.train_config or {}).get("loss", "hinge")
    res = learner.evaluate(ckpt.model, split, _solver_from(ckpt, args), kind)
    print(json.dumps({"accuracy": res.accuracy, "mean_loss": res.mean_loss, "failures": res.failures}))
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = _load_checkpoint(args.model)
    table = _read_table(args.data, ckpt.label_column, require_label=False)
    X = _normalized(ckpt, table.features)
    logits, ok = learner.predict_batch(ckpt.model, X, _solver_from(ckpt, args))
    classes = ckpt.classes or [str(i) for i in range(ckpt.model.k)]
    rows = []
    for z, good in zip(logits, ok):
        rows.append([*map(float, z), classes[int(np.argmax(z))] if good else ""])
    try:
        dataio.write_csv(args.out, [f"logit_{i}" for i in range(ckpt.model.k)] + ["predicted"], rows)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    failures = int((~ok).sum())
    if failures:
        print(f"{failures} samples failed the forward pass", file=sys.stderr)
    return EXIT_OK


def cmd_basis(args) -> int:
    ckpt = _load_checkpoint(args.model)
    table = _read_table(args.data, ckpt.label_column, require_label=False)
    if not 0 <= args.index < table.features.shape[0]:
        raise CliError(EXIT_IO, f"sample index {args.index} out of range")
    if args.grid < 2:
        raise CliError(EXIT_CONFIG, "grid must be at least 2")
    x = _normalized(ckpt, table.features[args.index:args.index + 1])[0]
    try:
        fw = forward_sample(ckpt.model, x, _solver_from(ckpt, args))
        basis = slcore.eval_basis(fw.trace, fw.spectrum, args.grid)
    except DSLError as exc:
        print(f"forward pass failed: {exc}", file=sys.stderr)
        return EXIT_FORWARD
    d = ckpt.model.d
    rows = [[float(t), *map(float, basis.u[:, j])] for j, t in enumerate(basis.times)]
    try:
        dataio.write_csv(args.out, ["t"] + [f"u{i + 1}" for i in range(d)], rows)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_bench(args) -> int:
    base = _read_config(args.config).train if args.config else TrainConfig(knots=200)
    base = _apply_globals(base, args)
    overrides = {"epochs": args.epochs} if args.epochs is not None else {}
    if args.sweep == "samples":
        grid = [("samples", s, dict(alpha=args.alpha), s) for s in _int_list(args.sizes)]
    elif args.sweep == "d":
        grid = [("d", d, dict(d=d), args.train_size) for d in _int_list(args.d_values)]
    else:
        grid = [("alpha", a, dict(alpha=a), args.train_size) for a in _float_list(args.alphas)]
    val_raw, val_y = learner.two_moons(args.val_size, args.noise, 10_001)
    test_raw, test_y = learner.two_moons(args.test_size, args.noise, 10_002)
    rows = []
    for sweep, value, change, size in grid:
        for seed in range(args.seeds):
            cfg = replace(base, seed=base.seed + seed, **change, **overrides)
            raw, y = learner.two_moons(size, args.noise, 1_000 + seed)
            train = learner.make_split(raw, y)
            val = learner.make_split(val_raw, val_y, train.normalization)
            test = learner.make_split(test_raw, test_y, train.normalization)
            try:
                res = learner.fit(cfg, train, val, n_classes=2)
                acc = learner.evaluate(res.model, test, cfg.solver(), cfg.loss).accuracy
                best_val = max(r.val_accuracy for r in res.history) if res.history else float("nan")
            except TrainingAborted:
                acc = best_val = float("nan")
            rows.append([sweep, value, cfg.seed, size, cfg.d, cfg.alpha, float(best_val), float(acc)])
            print(f"{sweep}={value} seed={cfg.seed}: test accuracy {acc:.4f}", file=sys.stderr)
    try:
        dataio.write_csv(args.out, ["sweep", "value", "seed", "train_size", "d", "alpha",
                                    "val_accuracy", "test_accuracy"], rows)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = selfcheck.run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_IO


def cmd_gen_moons(args) -> int:
    if args.m < 2 or args.m % 2:
        raise CliError(EXIT_CONFIG, "--m must be a positive even number")
    X, y = learner.two_moons(args.m, args.noise, args.seed if args.seed is not None else 0)
    try:
        dataio.write_csv(args.out, ["x1", "x2", "label"], [[float(a), float(b), int(c)] for (a, b), c in zip(X, y)])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsl", description="Sturm-Liouville basis classifier.")
    p.add_argument("--seed", type=int, default=None, help="override the configured random seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads for per-sample solves")
    p.add_argument("--precision", choices=sorted(PRECISION), default=None,
                   help="tolerance preset: standard (1e-4) or high (1e-8)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="fit a model and write a checkpoint and history CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--history", default=None, help="history CSV path (default: next to the checkpoint)")
    s.add_argument("--freeze-knot-positions", action="store_true",
                   help="treat knot positions as constants in the vector-field gradient")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="accuracy, mean loss and failures on a labelled CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="logits and predicted class for every row")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("basis", help="eigenfunctions along the field line of one sample")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--grid", type=int, default=501)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_basis)

    s = sub.add_parser("bench-sample-efficiency", help="two-moons accuracy sweeps")
    s.add_argument("--config", default=None)
    s.add_argument("--sweep", choices=["samples", "d", "alpha"], default="samples")
    s.add_argument("--sizes", default="100,200,400,800")
    s.add_argument("--d-values", default=",".join(str(v) for v in range(2, 21, 2)))
    s.add_argument("--alphas", default="0,1e-4,1e-3,1e-2,1e-1,1,10")
    s.add_argument("--alpha", type=float, default=10.0, help="spectral coefficient for the samples sweep")
    s.add_argument("--train-size", type=int, default=400, help="training size for the d and alpha sweeps")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--val-size", type=int, default=1000)
    s.add_argument("--test-size", type=int, default=1000)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("selfcheck", help="analytic, oracle, orthogonality and gradient checks")
    s.set_defaults(func=cmd_selfcheck)

    s = sub.add_parser("gen-moons", help="write a two-moons CSV")
    s.add_argument("--m", type=int, default=500)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_moons)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"dsl: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"dsl: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def run() -> None:
    sys.exit(main())
