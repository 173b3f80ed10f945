"""``studentrisk`` command-line tool.

Exit status: 0 success, 1 modeling failure, 2 input or usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .association import (ALPHA, TAU, AssociationError, associate, md_escape,
                          select_variables, selected_names)
from .classifiers import (METHOD_LABELS, METHODS, MethodConfig, ModelError, fit_method,
                          resolve_method)
from .dataset import Dataset, DatasetError, read_dataset, serialize, write_dataset
from .evaluation import BenchmarkConfig, EvaluationError, run_benchmark
from .imputation import ImputationConfig, ImputationLog, impute_missing
from .synth import (FIXTURES, CohortSpec, GenerationManifest, SynthError, generate_cohort,
                    paper_fixture)

EXIT_OK, EXIT_MODEL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def pct_int(count: int, total: int) -> int:
    """Round 100*count/total to the nearest integer, halves up, exactly."""
    return (200 * count + total) // (2 * total)


# -- shared helpers ----------------------------------------------------------

def _load(path, schema=None, **kw) -> Dataset:
    try:
        return read_dataset(path, schema, **kw)
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {exc.filename}") from None


def _prepare(dataset: Dataset, args, k: int = 10) -> Dataset:
    """Impute automatically when cells are missing, unless --no-impute."""
    if not dataset.has_missing:
        return dataset
    if args.no_impute:
        raise InputError(f"{int(dataset.missing_mask.sum())} missing cells and --no-impute given")
    out, log = impute_missing(dataset, ImputationConfig(k))
    print(f"[studentrisk] imputed {len(log)} missing cells by k-NN median (k={k}); "
          "pass --no-impute to disable", file=sys.stderr)
    return out


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


# -- describe ----------------------------------------------------------------

def describe_dict(dataset: Dataset) -> dict:
    y = dataset.y
    n = int(y.size)
    rows = []
    for name in dataset.predictor_names:
        var = dataset.variable(name)
        col = dataset.column(name)
        obs = col[~np.isnan(col)]
        row = {"variable": name, "kind": var.kind, "level_range": var.level_range if
               var.discrete else "", "missing": int(col.size - obs.size)}
        if var.kind == "binary":
            row["percent_one"] = pct_int(int((obs == 1).sum()), obs.size) if obs.size else None
        else:
            row["mean"] = round(float(obs.mean()), 1) if obs.size else None
        rows.append(row)
    return {"n": n, "n_pass": int(y.sum()),
            "success_rate_pct": pct_int(int(y.sum()), n) if n else None,
            "variables": rows}


def describe_markdown(d: dict) -> str:
    rate = "—" if d["success_rate_pct"] is None else d["success_rate_pct"]
    lines = ["| Variables | Value |", "| --- | ---: |",
             f"| Number of students | {d['n']} |", f"| Success rate (%) | {rate} |"]
    for row in d["variables"]:
        if "percent_one" in row:
            label, val = f"{row['variable']} (%)", row["percent_one"]
        else:
            label = f"{row['variable']} {row['level_range']}".rstrip()
            val = None if row["mean"] is None else f"{row['mean']:.1f}"
        lines.append(f"| {md_escape(label)} | {'—' if val is None else val} |")
    return "\n".join(lines) + "\n"


def cmd_describe(args) -> int:
    dataset = _load(args.data, args.schema)
    d = describe_dict(dataset)
    _emit(_dump(d) if args.format == "json" else describe_markdown(d), args.out)
    return EXIT_OK


# -- associate ---------------------------------------------------------------

def cmd_associate(args) -> int:
    dataset = _prepare(_load(args.data, args.schema), args)
    report = associate(dataset, args.alpha, args.tau, args.report_threshold)
    if not report.selected:
        report.notes.append("No variable met the selection rule.")
    if args.format == "json":
        d = report.to_dict()
        d["tau"] = d["tau"] if math.isfinite(d["tau"]) else None
        text = _dump(d)
    else:
        text = report.to_markdown()
    _emit(text, args.out)
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------

def _methods(spec: str | None) -> tuple:
    if spec is None or spec.strip().lower() == "all":
        return METHODS
    if spec.strip().lower() in ("baseline", "none", ""):
        return ()
    out = []
    for part in spec.split(","):
        tag = resolve_method(part)
        if tag != "majority" and tag not in out:
            out.append(tag)
    return tuple(m for m in METHODS if m in out)


def _method_config(args) -> MethodConfig:
    return MethodConfig(n_trees=args.trees, tune_trees=args.tune_trees,
                        inner_folds=args.folds)


def cmd_evaluate(args) -> int:
    dataset = _prepare(_load(args.data, args.schema), args)
    config = BenchmarkConfig(folds=args.folds, seed=args.seed, alpha=args.alpha, tau=args.tau,
                             select=not args.no_select, select_in_folds=args.select_in_folds,
                             methods=_methods(args.methods), method_config=_method_config(args))
    report = run_benchmark(dataset, config)
    if args.format == "json":
        text = _dump(report.to_dict())
    else:
        text = report.to_markdown()
    _emit(text, args.out)
    for r in report.results:
        for col, msg in r.failures.items():
            print(f"[studentrisk] {r.label} ({col}) failed: {msg}", file=sys.stderr)
    return EXIT_MODEL if report.all_failed else EXIT_OK


# -- predict -----------------------------------------------------------------

def _check_same_schema(train: Dataset, apply: Dataset):
    a = {v.name: v for v in train.schema}
    b = {v.name: v for v in apply.schema}
    problems = sorted(set(a) ^ set(b))
    problems += sorted(nm for nm in set(a) & set(b)
                       if (a[nm].kind, a[nm].levels, a[nm].role)
                       != (b[nm].kind, b[nm].levels, b[nm].role))
    if problems or train.names != apply.names:
        detail = ", ".join(problems) if problems else "column order differs"
        raise InputError(f"train and apply schemas differ: {detail}")


def risk_list(model, apply: Dataset) -> list:
    X = apply.matrix(list(model.features))
    if apply.n == 0:
        return []
    pred = model.predict(X)
    prob = model.predict_proba(X)
    out = []
    for i in range(apply.n):
        out.append({"row": apply.row_label(i), "predicted": int(pred[i]),
                    "probability": None if prob is None else float(prob[i]),
                    "risk": "HPS" if pred[i] == 1 else "LPS"})
    return out


def cmd_predict(args) -> int:
    train = _load(args.train, args.schema)
    apply = _load(args.apply, args.apply_schema or args.schema, allow_missing_outcome=True)
    _check_same_schema(train, apply)
    if train.has_missing or apply.has_missing:
        combined = Dataset(train.schema, np.vstack([train.values, apply.values]),
                           tuple(train.row_label(i) for i in range(train.n))
                           + tuple(apply.row_label(i) for i in range(apply.n)))
        combined = _prepare(combined, args)
        train = combined.take(np.arange(train.n))
        apply = combined.take(np.arange(train.n, combined.n))
    names = train.predictor_names
    if not args.no_select:
        try:
            names = selected_names(select_variables(train, args.alpha, args.tau)) or names
        except AssociationError:
            pass
    tag = resolve_method(args.method)
    config = _method_config(args)
    model = fit_method(tag, train.matrix(names), train.y, config, args.seed, features=names)
    rows = risk_list(model, apply)
    if args.model_out:
        with open(args.model_out, "w", encoding="utf-8") as f:
            f.write(_dump(model.to_dict()))
    if args.format == "json":
        text = _dump({"method": tag, "label": METHOD_LABELS.get(tag, tag),
                      "features": list(names), "students": rows})
    else:
        lines = [f"Method: {METHOD_LABELS.get(tag, tag)}", "",
                 "| Student | Predicted | Probability | Risk |", "| --- | ---: | ---: | --- |"]
        for r in rows:
            p = "—" if r["probability"] is None else f"{r['probability']:.4f}"
            lines.append(f"| {md_escape(r['row'])} | {r['predicted']} | {p} | {r['risk']} |")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


# -- synth -------------------------------------------------------------------

def _synth_spec(source: str, seed, missing_rate):
    """Fixture name, cohort spec JSON, or manifest JSON (replayed exactly)."""
    if os.path.isfile(source):
        with open(source, encoding="utf-8") as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as exc:
                raise InputError(f"{source}: invalid JSON ({exc})") from None
        if "spec" in d:
            manifest = GenerationManifest.from_dict(d)
            return CohortSpec.from_dict(manifest.spec), manifest.seed
        spec = CohortSpec.from_dict(d)
    elif source in FIXTURES:
        spec = paper_fixture(source)
    else:
        raise InputError(f"unknown fixture {source!r}; valid names: {', '.join(FIXTURES)}")
    if missing_rate is not None:
        spec = CohortSpec.from_dict({**spec.to_dict(), "missing_rate": missing_rate})
    return spec, spec.seed if seed is None else seed


def cmd_synth(args) -> int:
    spec, seed = _synth_spec(args.source, args.seed, args.missing_rate)
    dataset, manifest = generate_cohort(spec, seed)
    prefix = args.out
    try:
        write_dataset(dataset, prefix + ".csv", prefix + ".schema.json")
        with open(prefix + ".manifest.json", "w", encoding="utf-8", newline="\n") as f:
            f.write(manifest.to_json())
    except OSError as exc:
        raise InputError(f"cannot write {exc.filename}: {exc.strerror}") from None
    print(f"wrote {prefix}.csv ({dataset.n} rows, {manifest.pass_count} passing)",
          file=sys.stderr)
    return EXIT_OK


# -- impute ------------------------------------------------------------------

def cmd_impute(args) -> int:
    dataset = _load(args.data, args.schema)
    if dataset.has_missing:
        out, log = impute_missing(dataset, ImputationConfig(args.k))
    else:
        out, log = dataset, ImputationLog([])
    if args.out:
        write_dataset(out, args.out + ".csv", args.out + ".schema.json")
        with open(args.out + ".imputation.json", "w", encoding="utf-8", newline="\n") as f:
            f.write(log.to_json())
    else:
        sys.stdout.write(serialize(out))
    print(f"[studentrisk] imputed {len(log)} cells", file=sys.stderr)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_common(p, data=True):
    if data:
        p.add_argument("data", help="CSV file (schema sidecar defaults to <stem>.schema.json)")
    p.add_argument("--schema", help="JSON schema sidecar")
    p.add_argument("--format", choices=("markdown", "json"), default="markdown")
    p.add_argument("--out", help="write the report here instead of stdout")


def _add_selection(p):
    p.add_argument("--alpha", type=float, default=ALPHA, help="chi-squared level (default 0.05)")
    p.add_argument("--tau", type=float, default=TAU,
                   help="|Spearman r| selection threshold (default 0.15; 'inf' disables)")
    p.add_argument("--no-impute", action="store_true", help="fail instead of imputing")


def _add_model(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--trees", type=int, default=1000, help="trees per random forest")
    p.add_argument("--tune-trees", type=int, default=100,
                   help="trees per forest while enumerating mtry")
    p.add_argument("--no-select", action="store_true", help="use every predictor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="studentrisk",
                                     description="Predict which students are at risk of failing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="cohort size, success rate and variable summaries")
    _add_common(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("associate", help="chi-squared / Spearman variable selection")
    _add_common(p)
    _add_selection(p)
    p.add_argument("--report-threshold", type=float, default=0.2,
                   help="list group means for |r| above this")
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("evaluate", help="resubstitution and cross-validation benchmark")
    _add_common(p)
    _add_selection(p)
    _add_model(p)
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS)
                   + " ('baseline' for none)")
    p.add_argument("--select-in-folds", action="store_true",
                   help="repeat variable selection inside each training fold")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="fit on TRAIN, tag APPLY students HPS/LPS")
    p.add_argument("train")
    p.add_argument("apply")
    _add_common(p, data=False)
    p.add_argument("--apply-schema", help="schema for APPLY (defaults to its sidecar)")
    _add_selection(p)
    _add_model(p)
    p.add_argument("--method", default="logistic", help="one of " + ",".join(METHODS))
    p.add_argument("--model-out", help="also save the fitted model as JSON")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("source", help="fixture (" + ", ".join(FIXTURES)
                   + "), cohort spec JSON, or manifest JSON")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--missing-rate", type=float, help="MCAR rate for predictor cells")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("impute", help="fill missing cells by k-NN median")
    p.add_argument("data")
    p.add_argument("--schema")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", help="output prefix (default: CSV to stdout)")
    p.set_defaults(func=cmd_impute)
    return parser


def _validate(args):
    if getattr(args, "folds", 2) < 2:
        raise InputError("--folds must be at least 2")
    if hasattr(args, "alpha") and not 0 < args.alpha < 1:
        raise InputError("--alpha must be in (0, 1)")
    if hasattr(args, "tau") and not args.tau >= 0:
        raise InputError("--tau must be non-negative")
    if getattr(args, "trees", 1) < 1 or getattr(args, "tune_trees", 1) < 1:
        raise InputError("tree counts must be positive")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        return args.func(args)
    except (InputError, DatasetError, SynthError, AssociationError, json.JSONDecodeError) as exc:
        print(f"studentrisk: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, EvaluationError, np.linalg.LinAlgError) as exc:
        print(f"studentrisk: modeling failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, ValueError) as exc:
        print(f"studentrisk: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
