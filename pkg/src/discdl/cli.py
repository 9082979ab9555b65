"""Command-line front end: ``discdl gen|train|eval|compare|inspect``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import classify, data_io, model_io, trainers
from .discriminators import coherence_report
from .sparse_coding import ConvergenceError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _unit_float(text: str) -> float:
    v = _nonneg_float(text)
    if v > 1:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1], got {text}")
    return v


def _fraction(text: str) -> float:
    v = _nonneg_float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a fraction strictly between 0 and 1, got {text}")
    return v


def _threads(args):
    n = getattr(args, "threads", None)
    return threadpool_limits(limits=n) if n else nullcontext()


def _load_config(path, method: str, seed: int) -> trainers.MethodConfig:
    if path is None:
        return trainers.MethodConfig(method=method, seed=seed)
    return model_io.read_config(path, method, seed)


def _write_trace(trace, path) -> None:
    with open(data_io.ensure_parent(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for i, f in enumerate(trace.objective):
            w.writerow([i, repr(float(f))])


# --- gen ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = data_io.SynthSpec(
        n_classes=args.classes,
        n_features=args.dim,
        atoms_per_class=args.atoms,
        samples_per_class=args.samples,
        sparsity=args.sparsity,
        noise=args.noise,
        coherence=args.coherence,
        shared_atoms=args.shared,
        shared_rate=args.shared_rate,
        signed=args.signed,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset, dicts = data_io.synth_planted(spec)
    train, test = data_io.split(dataset, 1.0 - args.test_fraction, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "train.csv", out / "test.csv", out / "dictionary.csv"]
    data_io.save_csv(train, paths[0])
    data_io.save_csv(test, paths[1])
    data_io.save_dictionaries(dicts, paths[2])
    for p in paths:
        print(p)
    return EXIT_OK


# --- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.method, args.seed)
    cfg.validate()
    dataset = data_io.load_csv(args.data)
    model = trainers.train(dataset, cfg)
    model_io.save_model(model, data_io.ensure_parent(args.out))
    trace_path = args.trace or f"{args.out}.trace.csv"
    _write_trace(model.trace, trace_path)
    print(f"model: {args.out}")
    print(f"trace: {trace_path}")
    print(f"iterations: {len(model.trace.objective) - 1} ({model.trace.reason})")
    print(f"final objective: {model.final_objective!r}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def _format_metrics(metrics: classify.Metrics, counts) -> str:
    lines = [f"accuracy: {metrics.accuracy:.4f}", "per-class accuracy:"]
    for c, (acc, n) in enumerate(zip(metrics.per_class, counts), start=1):
        shown = "n/a" if np.isnan(acc) else f"{acc:.4f}"
        lines.append(f"  class {c}: {shown} (n={int(n)})")
    lines.append("confusion matrix (rows: true class, columns: predicted class):")
    width = max(3, len(str(int(metrics.confusion.max(initial=0)))))
    for row in metrics.confusion:
        lines.append("  " + " ".join(f"{int(v):>{width}d}" for v in row))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    model = model_io.load_model(args.model)
    dataset = data_io.load_csv(args.data)
    d = model.dictionary.n_features
    if dataset.n_features != d:
        raise RuntimeError(f"dimension mismatch: data has d={dataset.n_features}, model expects d={d}")
    if dataset.labels.max() > model.n_classes:
        raise RuntimeError(f"data has label {dataset.labels.max()} but the model knows {model.n_classes} classes")
    mask = None
    if args.mask_tau is not None:
        if model.composite.decision_rule != "residual":
            raise UsageError("--mask-tau applies only to residual-rule models")
        mask = trainers.detect_common_atoms(model, args.mask_tau)
    coding = "per_class" if args.per_class_coding else "global"
    if args.per_class_coding and model.composite.decision_rule != "residual":
        raise UsageError("--per-class-coding applies only to residual-rule models")
    y_pred = classify.predict(model, dataset.signals, lam=args.lam, mask=mask, coding=coding)
    metrics = classify.evaluate_predictions(dataset.labels, y_pred, model.n_classes)
    counts = np.bincount(dataset.labels, minlength=model.n_classes + 1)[1:]
    if args.json:
        payload = {"method": model.method, "n_samples": dataset.n_samples, **metrics.to_dict()}
        print(json.dumps(payload, indent=2))
    else:
        print(f"method: {model.method}  samples: {dataset.n_samples}")
        print(_format_metrics(metrics, counts))
    return EXIT_OK


# --- compare -----------------------------------------------------------------


def _src_row(train, test, cfg) -> dict:
    lam = cfg.lam if cfg.lam is not None else 0.1 * data_io.mean_signal_norm(train)
    t0 = time.perf_counter()
    scores, _ = classify.src_scores(train, test.signals, lam)
    y_pred = np.argmin(scores, axis=0) + 1
    elapsed = time.perf_counter() - t0
    acc = classify.evaluate_predictions(test.labels, y_pred, train.n_classes).accuracy
    return {"method": "src", "track": "I", "accuracy": acc, "time": elapsed, "objective": None}


def _method_row(name, train, test, base) -> dict:
    cfg = trainers.MethodConfig(**{**base.to_dict(), "method": name})
    t0 = time.perf_counter()
    model = trainers.train(train, cfg)
    elapsed = time.perf_counter() - t0
    acc = classify.evaluate(model, test).accuracy
    return {
        "method": name,
        "track": model.track,
        "accuracy": acc,
        "time": elapsed,
        "objective": model.final_objective,
    }


def cmd_compare(args) -> int:
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not names:
        raise UsageError("--methods needs at least one method")
    train = data_io.load_csv(args.train)
    test = data_io.load_csv(args.test)
    if test.n_features != train.n_features:
        raise RuntimeError(f"dimension mismatch: train has d={train.n_features}, test has d={test.n_features}")
    test = data_io.LabeledDataset(test.signals, test.labels, max(train.n_classes, test.n_classes))
    base = _load_config(args.config, "metaface", args.seed)
    rows = []
    for name in names:
        try:
            if name == "src":
                rows.append(_src_row(train, test, base))
            elif name not in trainers.METHODS:
                raise trainers.ConfigError(f"unknown method {name!r}")
            else:
                rows.append(_method_row(name, train, test, base))
        except (ValueError, ConvergenceError, RuntimeError, np.linalg.LinAlgError) as exc:
            rows.append({"method": name, "error": str(exc)})
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    print(f"{'method':<14}{'track':<7}{'accuracy':>9}{'time[s]':>10}  final objective")
    for r in rows:
        if "error" in r:
            print(f"{r['method']:<14}error: {r['error']}")
            continue
        obj = "-" if r["objective"] is None else f"{r['objective']:.6g}"
        print(f"{r['method']:<14}{r['track']:<7}{r['accuracy']:>9.4f}{r['time']:>10.2f}  {obj}")
    return EXIT_OK


# --- inspect -----------------------------------------------------------------


def cmd_inspect(args) -> int:
    model = model_io.load_model(args.model)
    try:
        report = coherence_report(model.dictionary, args.tau)
    except ValueError as exc:
        raise RuntimeError(str(exc)) from None
    if args.json:
        print(json.dumps({"method": model.method, **report}, indent=2))
        return EXIT_OK
    print(f"method: {model.method}  atoms: {model.dictionary.n_atoms}  classes: {len(model.dictionary.class_ids())}")
    print("cross-class |<d_k, d_l>| per class pair:")
    for p in report["pairs"]:
        i, j = p["classes"]
        print(f"  classes {i}-{j}: max {p['max']:.6f}  mean {p['mean']:.6f}")
    print(f"atoms with cross-class coherence above tau={args.tau}: {len(report['flagged'])}")
    for f in report["flagged"]:
        print(f"  atom {f['atom']} (class {f['class']}): {f['coherence']:.6f}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="discdl", description="Discriminative dictionary learning for classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a planted synthetic dataset")
    g.add_argument("--classes", type=_positive_int, default=4)
    g.add_argument("--dim", type=_positive_int, default=32)
    g.add_argument("--atoms", type=_positive_int, default=6, help="planted atoms per class")
    g.add_argument("--samples", type=_positive_int, default=80, help="samples per class")
    g.add_argument("--sparsity", type=_positive_int, default=3)
    g.add_argument("--noise", type=_nonneg_float, default=0.01)
    g.add_argument("--coherence", type=_unit_float, default=0.0)
    g.add_argument("--shared", type=_nonneg_int, default=0, help="atoms common to every class")
    g.add_argument("--shared-rate", type=_unit_float, default=1.0, help="chance a shared atom is active in a sample")
    g.add_argument("--signed", action="store_true", help="random coefficient signs")
    g.add_argument("--test-fraction", type=_fraction, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".", help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one method and save the model")
    t.add_argument("method", choices=trainers.METHODS)
    t.add_argument("--config", help="key=value hyperparameter file")
    t.add_argument("--data", required=True, help="training CSV")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--trace", help="objective trace CSV (default: <out>.trace.csv)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=_positive_int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--json", action="store_true", help="machine-readable output")
    e.add_argument("--lam", type=_nonneg_float, help="override the coding weight")
    e.add_argument("--mask-tau", type=_unit_float, help="ignore atoms with cross-class coherence above this")
    e.add_argument("--per-class-coding", action="store_true", help="code queries over each class dictionary separately")
    e.add_argument("--threads", type=_positive_int)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train and test several methods on one split")
    c.add_argument("--methods", required=True, help="comma-separated; 'src' is allowed")
    c.add_argument("--train", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--config", help="key=value file shared by all methods")
    c.add_argument("--json", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--threads", type=_positive_int)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="report cross-class atom coherence of a model")
    i.add_argument("--model", required=True)
    i.add_argument("--tau", type=_unit_float, default=0.95, help="flag atoms above this coherence (default: 0.95)")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _threads(args):
            return args.func(args)
    except (UsageError, trainers.ConfigError) as exc:
        print(f"discdl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"discdl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
