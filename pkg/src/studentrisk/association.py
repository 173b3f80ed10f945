"""Association between questionnaire variables and success.

Pearson chi-squared independence tests, Spearman rank correlation, the
selection rule combining both, and pass/fail group means.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, DatasetError

ALPHA = 0.05
TAU = 0.15


class AssociationError(ValueError):
    pass


# -- incomplete gamma --------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300


def _lower_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_upper_regularized(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) for a > 0, x >= 0."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_fraction(a, x)


def chi2_sf(statistic: float, df: int) -> float:
    """Upper tail probability of the chi-squared distribution."""
    if statistic <= 0:
        return 1.0
    return gamma_upper_regularized(df / 2.0, statistic / 2.0)


# -- contingency tables ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray
    row_labels: tuple
    col_labels: tuple = (0, 1)
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] < 2 or counts.shape[1] < 2:
            raise AssociationError(f"table must be at least 2 x 2, got shape {counts.shape}")
        if (counts < 0).any():
            raise AssociationError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def table_from_counts(counts, row_labels=None, col_labels=None) -> ContingencyTable:
    """Build a table after dropping all-zero rows and columns."""
    counts = np.asarray(counts, dtype=np.int64)
    row_labels = tuple(range(counts.shape[0])) if row_labels is None else tuple(row_labels)
    col_labels = tuple(range(counts.shape[1])) if col_labels is None else tuple(col_labels)
    notes = []
    keep_r = counts.sum(axis=1) > 0
    keep_c = counts.sum(axis=0) > 0
    for lab, keep in zip(row_labels, keep_r):
        if not keep:
            notes.append(f"dropped level {lab} (no observations)")
    for lab, keep in zip(col_labels, keep_c):
        if not keep:
            notes.append(f"dropped outcome {lab} (no observations)")
    counts = counts[keep_r][:, keep_c]
    rows = tuple(lab for lab, k in zip(row_labels, keep_r) if k)
    cols = tuple(lab for lab, k in zip(col_labels, keep_c) if k)
    return ContingencyTable(counts, rows, cols, tuple(notes))


def contingency(dataset: Dataset, variable: str) -> ContingencyTable:
    """Cross-tabulate a discrete variable's levels against the outcome."""
    var = dataset.variable(variable)
    if not var.discrete:
        raise AssociationError(f"{variable!r} is continuous; discretize it first")
    if dataset.n == 0:
        raise AssociationError("empty dataset")
    x = dataset.column(variable)
    if np.isnan(x).any():
        raise AssociationError(f"{variable!r} has missing cells; impute first")
    y = dataset.y
    counts = np.zeros((len(var.levels), 2), dtype=np.int64)
    for r, level in enumerate(var.levels):
        sel = x == level
        counts[r, 0] = int(np.sum(sel & (y == 0)))
        counts[r, 1] = int(np.sum(sel & (y == 1)))
    return table_from_counts(counts, var.levels, (0, 1))


def expected_counts(table: ContingencyTable) -> np.ndarray:
    c = table.counts.astype(float)
    return np.outer(c.sum(axis=1), c.sum(axis=0)) / c.sum()


def chi_squared_test(table: ContingencyTable, *, yates: bool = False):
    """Pearson's test of independence. Returns ``(statistic, df, p)``.

    ``yates`` applies the continuity correction to 2 x 2 tables; it is off
    by default.
    """
    observed = table.counts.astype(float)
    expected = expected_counts(table)
    if (expected == 0).any():
        raise AssociationError("zero expected count")
    if (expected < 5).any():
        warnings.warn("expected count below 5; chi-squared approximation may be poor",
                      stacklevel=2)
    diff = np.abs(observed - expected)
    if yates and observed.shape == (2, 2):
        diff = np.maximum(diff - 0.5, 0.0)
    statistic = float(np.sum(diff ** 2 / expected))
    df = (observed.shape[0] - 1) * (observed.shape[1] - 1)
    return statistic, df, chi2_sf(statistic, df)


# -- rank correlation --------------------------------------------------------

def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="stable")
    s = x[order]
    ranks = np.empty(x.size)
    start = 0
    for end in range(1, x.size + 1):
        if end == x.size or s[end] != s[start]:
            ranks[order[start:end]] = (start + end + 1) / 2.0
            start = end
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of the midrank vectors of ``x`` and ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise AssociationError("spearman needs two equal-length vectors")
    if x.size < 3:
        raise AssociationError("spearman needs at least 3 observations")
    rx = midranks(x)
    ry = midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0 or syy == 0:
        raise AssociationError("correlation undefined for a constant input")
    r = float(rx @ ry) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# -- selection ---------------------------------------------------------------

@dataclass(frozen=True)
class AssociationResult:
    variable: str
    chi2: float
    df: int
    p: float
    spearman_r: float
    selected: bool
    diagnostic: str = ""

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v
        return {"variable": self.variable, "chi2": num(self.chi2), "df": self.df,
                "p": num(self.p), "spearman_r": num(self.spearman_r),
                "selected": self.selected, "diagnostic": self.diagnostic}


def select_variables(dataset: Dataset, alpha: float = ALPHA, tau: float = TAU,
                     names=None) -> list[AssociationResult]:
    """Test every predictor against the outcome and flag the associated ones.

    A predictor is selected when its chi-squared p-value is below ``alpha``
    OR its |Spearman r| exceeds ``tau`` (strictly). Results come back sorted
    by |r|, largest first. A predictor whose tests cannot be computed is
    reported unselected with a diagnostic instead of raising.
    """
    names = dataset.predictor_names if names is None else list(names)
    if len(names) < 2:
        raise AssociationError("selection needs at least 2 predictors")
    if dataset.has_missing:
        raise AssociationError("dataset has missing cells; impute first")
    y = dataset.y
    results = []
    for name in names:
        chi2 = p = r = math.nan
        df = 0
        notes = []
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                chi2, df, p = chi_squared_test(contingency(dataset, name))
        except (AssociationError, DatasetError) as exc:
            notes.append(f"chi-squared: {exc}")
        try:
            r = spearman(dataset.column(name), y)
        except AssociationError as exc:
            notes.append(f"spearman: {exc}")
        selected = bool((not math.isnan(p) and p < alpha)
                        or (not math.isnan(r) and abs(r) > tau))
        results.append(AssociationResult(name, chi2, df, p, r, selected, "; ".join(notes)))
    return sorted(results, key=lambda res: -abs(res.spearman_r)
                  if not math.isnan(res.spearman_r) else 0.0)


def selected_names(results) -> list[str]:
    return [r.variable for r in results if r.selected]


# -- group means -------------------------------------------------------------

@dataclass(frozen=True)
class GroupMeansRow:
    variable: str
    mean_pass: float
    mean_fail: float
    level_range: str = ""

    def to_dict(self) -> dict:
        return {"variable": self.variable, "level_range": self.level_range,
                "mean_pass": self.mean_pass, "mean_fail": self.mean_fail}


def group_means(dataset: Dataset, variables) -> list[GroupMeansRow]:
    y = dataset.y
    if not (y == 1).any():
        raise AssociationError("no passing students; pass-group mean undefined")
    if not (y == 0).any():
        raise AssociationError("no failing students; fail-group mean undefined")
    rows = []
    for name in variables:
        x = dataset.column(name)
        if np.isnan(x).any():
            raise AssociationError(f"{name!r} has missing cells; impute first")
        rows.append(GroupMeansRow(name, float(x[y == 1].mean()), float(x[y == 0].mean()),
                                  dataset.variable(name).level_range))
    return rows


# -- rendering ---------------------------------------------------------------

def md_escape(text: str) -> str:
    return str(text).replace("\\", "\\\\").replace("|", "\\|")


def render_group_means(rows, title: str | None = None) -> str:
    lines = []
    if title:
        lines += [f"**{md_escape(title)}**", ""]
    lines += ["| Variables | Mean (S=1) | Mean (S=0) |", "|---|---:|---:|"]
    for row in rows:
        label = md_escape(row.variable)
        if row.level_range:
            label = f"{label} {md_escape(row.level_range)}"
        lines.append(f"| {label} | {row.mean_pass:.2f} | {row.mean_fail:.2f} |")
    return "\n".join(lines) + "\n"


def _fmt(v, spec):
    return "—" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def render_associations(results) -> str:
    lines = ["| Variable | chi2 | df | p | Spearman r | Selected |",
             "|---|---:|---:|---:|---:|:---:|"]
    for r in results:
        lines.append(f"| {md_escape(r.variable)} | {_fmt(r.chi2, '.3f')} | {r.df} | "
                     f"{_fmt(r.p, '.4g')} | {_fmt(r.spearman_r, '.3f')} | "
                     f"{'yes' if r.selected else 'no'} |")
    return "\n".join(lines) + "\n"


@dataclass
class AssociationReport:
    results: list
    group_means: list
    alpha: float
    tau: float
    report_threshold: float
    notes: list = field(default_factory=list)

    @property
    def selected(self) -> list[str]:
        return selected_names(self.results)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "tau": self.tau,
                "report_threshold": self.report_threshold,
                "notes": list(self.notes),
                "results": [r.to_dict() for r in self.results],
                "selected": self.selected,
                "group_means": [g.to_dict() for g in self.group_means]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        out = [f"{note}\n" for note in self.notes]
        out.append(f"## Association with success (alpha = {self.alpha:g}, |r| > {self.tau:g})\n")
        out.append(render_associations(self.results))
        if self.selected:
            out.append(f"\nSelected ({len(self.selected)}): "
                       + ", ".join(md_escape(s) for s in self.selected) + "\n")
        else:
            out.append("\nSelected (0): no variable met the selection rule.\n")
        out.append(f"\n## Group means for |r| > {self.report_threshold:g}\n")
        out.append(render_group_means(self.group_means))
        return "\n".join(out)


def associate(dataset: Dataset, alpha: float = ALPHA, tau: float = TAU,
              report_threshold: float = 0.2) -> AssociationReport:
    results = select_variables(dataset, alpha, tau)
    strong = [r.variable for r in results
              if not math.isnan(r.spearman_r) and abs(r.spearman_r) > report_threshold]
    means = group_means(dataset, strong) if strong else []
    return AssociationReport(results, means, alpha, tau, report_threshold)
