"""Resubstitution error, stratified k-fold CV and the benchmark report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .association import (ALPHA, TAU, AssociationError, md_escape, select_variables,
                          selected_names)
from .classifiers import (METHOD_LABELS, METHODS, RESUB_METHODS, MethodConfig, ModelError,
                          fit_method, resolve_method)
from .dataset import Dataset
from .folds import FoldAssignment, as_seed, derive_seed, stratified_folds

__all__ = ["EvaluationError", "MethodResult", "EvaluationReport", "BenchmarkConfig",
           "stratified_folds", "majority_baseline", "resubstitution_error",
           "cross_validate", "run_benchmark"]

MISSING_CELL = "—"


class EvaluationError(ValueError):
    pass


def majority_baseline(y) -> float:
    """Accuracy of always predicting the more frequent class."""
    y = np.asarray(y).astype(np.int64)
    if y.size == 0:
        raise EvaluationError("majority baseline needs at least one row")
    ones = int((y == 1).sum())
    return max(ones, y.size - ones) / y.size


def _method_seed(seed: int, tag: str, *keys: int) -> int:
    code = METHODS.index(tag) if tag in METHODS else len(METHODS)
    return derive_seed(seed, code, *keys)


def _require_complete(dataset: Dataset):
    if dataset.has_missing:
        raise EvaluationError("dataset has missing cells; impute first")


def resubstitution_error(method: str, dataset: Dataset, config: MethodConfig = MethodConfig(),
                         rng=None, *, kernels=None) -> float:
    """Fit on every row and score on the same rows."""
    res, _ = _resubstitution(resolve_method(method), dataset, config, as_seed(rng), kernels)
    return res


def _resubstitution(tag, dataset, config, seed, kernels):
    _require_complete(dataset)
    names = dataset.predictor_names
    X, y = dataset.matrix(names), dataset.y
    model = fit_method(tag, X, y, config, _method_seed(seed, tag), objective="resub",
                       features=names, kernels=kernels)
    return float(np.mean(model.predict(X) != y)), model


@dataclass
class MethodResult:
    method: str
    resubstitution_error: float | None = None
    cv_mean: float | None = None
    cv_std: float | None = None
    fold_errors: list | None = None
    hyperparameters: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return METHOD_LABELS.get(self.method, self.method)

    def to_dict(self) -> dict:
        return {"method": self.method, "label": self.label,
                "resubstitution_error": self.resubstitution_error,
                "cv_mean": self.cv_mean, "cv_std": self.cv_std,
                "fold_errors": self.fold_errors, "hyperparameters": self.hyperparameters,
                "failures": self.failures}


def _fold_selection(dataset: Dataset, rows, alpha, tau):
    sub = dataset.take(rows)
    names = selected_names(select_variables(sub, alpha, tau))
    return names or sub.predictor_names


def cross_validate(method: str, dataset: Dataset, folds: FoldAssignment,
                   config: MethodConfig = MethodConfig(), rng=None, *,
                   select_in_folds: tuple | None = None, kernels=None) -> MethodResult:
    """k-fold CV: fit on k-1 folds, score the held-out fold, aggregate.

    All internal tuning happens inside :func:`fit_method` on the training
    fold only. Pass ``select_in_folds=(alpha, tau)`` to redo variable
    selection on each training fold instead of using the given predictors.
    """
    tag = resolve_method(method)
    _require_complete(dataset)
    y = dataset.y
    if folds.n != y.size:
        raise EvaluationError(f"fold assignment covers {folds.n} rows, dataset has {y.size}")
    seed = as_seed(rng)
    errors, params = [], []
    for f, (train, test) in enumerate(folds.splits()):
        ytr = y[train]
        if not ((ytr == 0).any() and (ytr == 1).any()):
            raise EvaluationError(f"training data for fold {f} contains a single class")
        names = (dataset.predictor_names if select_in_folds is None
                 else _fold_selection(dataset, train, *select_in_folds))
        X = dataset.matrix(names)
        model = fit_method(tag, X[train], ytr, config, _method_seed(seed, tag, f),
                           objective="cv", features=names, kernels=kernels)
        errors.append(float(np.mean(model.predict(X[test]) != y[test])))
        params.append(model.hyperparameters)
    arr = np.asarray(errors)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MethodResult(tag, cv_mean=float(arr.mean()), cv_std=std, fold_errors=errors,
                        hyperparameters={"folds": params})


@dataclass(frozen=True)
class BenchmarkConfig:
    folds: int = 10
    seed: int = 0
    alpha: float = ALPHA
    tau: float = TAU
    select: bool = True
    select_in_folds: bool = False
    methods: tuple = METHODS
    method_config: MethodConfig = MethodConfig()

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        object.__setattr__(self, "methods", tuple(resolve_method(m) for m in self.methods))


def _pct(x) -> str:
    return MISSING_CELL if x is None else f"{100 * x:.2f}"


def _best(values: dict) -> list:
    present = {k: v for k, v in values.items() if v is not None}
    if not present:
        return []
    low = min(present.values())
    return [k for k, v in present.items() if v == low]


@dataclass
class EvaluationReport:
    dataset: dict
    selected: list
    results: list
    baseline: float
    folds: int
    seed: int
    notes: list = field(default_factory=list)

    def result(self, method: str) -> MethodResult:
        return next(r for r in self.results if r.method == method)

    @property
    def resub_rows(self) -> list:
        return [r for r in self.results if r.method in RESUB_METHODS]

    @property
    def best_resubstitution(self) -> list:
        return _best({r.method: r.resubstitution_error for r in self.resub_rows})

    @property
    def best_cv(self) -> list:
        return _best({r.method: r.cv_mean for r in self.results})

    @property
    def failed(self) -> list:
        return [r.method for r in self.results if r.failures]

    @property
    def all_failed(self) -> bool:
        return bool(self.results) and all(
            r.cv_mean is None and r.resubstitution_error is None for r in self.results)

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "selected": list(self.selected),
                "folds": self.folds, "seed": self.seed,
                "baseline": {"accuracy": self.baseline, "error": 1.0 - self.baseline},
                "results": [r.to_dict() for r in self.results],
                "best": {"resubstitution": self.best_resubstitution, "cv": self.best_cv},
                "notes": list(self.notes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        d = self.dataset
        out = [f"Students: {d['n']}, passing: {d['n_pass']}, "
               f"selected variables: {len(self.selected)}\n",
               f"Majority baseline: accuracy {100 * self.baseline:.2f}% "
               f"(error {100 * (1 - self.baseline):.2f}%)\n"]
        out += [f"Note: {md_escape(n)}\n" for n in self.notes]
        best_r, best_c = set(self.best_resubstitution), set(self.best_cv)
        if self.resub_rows:
            out.append("## Resubstitution error (%)\n")
            out.append("| Method | Error |\n| --- | ---: |")
            for r in self.resub_rows:
                cell = _pct(r.resubstitution_error)
                out.append(f"| {r.label} | {f'**{cell}**' if r.method in best_r else cell} |")
            out.append("")
        if self.results:
            out.append(f"## Cross-validation error (%), {self.folds} folds\n")
            out.append("| Method | Error |\n| --- | ---: |")
            for r in self.results:
                if r.cv_mean is None:
                    cell = MISSING_CELL
                else:
                    cell = f"{_pct(r.cv_mean)} ± {_pct(r.cv_std)}"
                    if r.method in best_c:
                        cell = f"**{cell}**"
                out.append(f"| {r.label} | {cell} |")
            out.append("")
        fails = [(r.label, col, msg) for r in self.results for col, msg in r.failures.items()]
        if fails:
            out.append("## Failures\n")
            out += [f"- {label} ({col}): {md_escape(msg)}" for label, col, msg in fails]
            out.append("")
        return "\n".join(out)


def run_benchmark(dataset: Dataset, config: BenchmarkConfig = BenchmarkConfig(), *,
                  kernels=None) -> EvaluationReport:
    """Resubstitution and CV error for each configured method, plus the baseline.

    k-NN has no resubstitution row. A method that fails keeps its row with
    empty cells and a diagnostic; the remaining methods still run.
    """
    _require_complete(dataset)
    notes = []
    data = dataset
    selected = dataset.predictor_names
    if config.select and not config.select_in_folds:
        try:
            selected = selected_names(select_variables(dataset, config.alpha, config.tau))
        except AssociationError as exc:
            notes.append(f"variable selection skipped: {exc}")
            selected = dataset.predictor_names
        if not selected:
            notes.append("no variable met the selection rule; using all predictors")
            selected = dataset.predictor_names
        data = dataset.select(selected)
    y = data.y
    folds = stratified_folds(y, config.folds, derive_seed(config.seed, 0))
    in_folds = (config.alpha, config.tau) if config.select and config.select_in_folds else None
    if in_folds:
        notes.append("variable selection repeated inside each training fold")
    results = []
    for tag in config.methods:
        if tag == "majority":
            continue
        res = MethodResult(tag)
        if tag in RESUB_METHODS:
            try:
                err, model = _resubstitution(tag, data, config.method_config,
                                             derive_seed(config.seed, 1), kernels)
                res.resubstitution_error = err
                res.hyperparameters["resubstitution"] = model.hyperparameters
            except (ModelError, EvaluationError, np.linalg.LinAlgError, ValueError) as exc:
                res.failures["resubstitution"] = str(exc)
        try:
            cv = cross_validate(tag, data, folds, config.method_config,
                                derive_seed(config.seed, 2), select_in_folds=in_folds,
                                kernels=kernels)
            res.cv_mean, res.cv_std, res.fold_errors = cv.cv_mean, cv.cv_std, cv.fold_errors
            res.hyperparameters["cv"] = cv.hyperparameters["folds"]
        except (ModelError, EvaluationError, np.linalg.LinAlgError, ValueError) as exc:
            res.failures["cv"] = str(exc)
        results.append(res)
    descriptor = {"n": int(y.size), "n_pass": int(y.sum()),
                  "predictors": dataset.predictor_names}
    return EvaluationReport(descriptor, list(selected), results, majority_baseline(y),
                            config.folds, config.seed, notes)
