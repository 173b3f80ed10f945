"""Schema-typed questionnaire tables.

A dataset is a float matrix (NaN marks a missing cell) plus a list of
:class:`VariableSpec` describing each column. Discrete columns hold integer
level codes stored as floats so that one array type covers every kind.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

MISSING = "NA"

ORDINAL = "ordinal-discrete"
BINARY = "binary"
CONTINUOUS = "continuous-raw"
KINDS = (ORDINAL, BINARY, CONTINUOUS)

PREDICTOR = "predictor"
OUTCOME = "outcome"
EXCLUDED = "excluded"
ROLES = (PREDICTOR, OUTCOME, EXCLUDED)


class DatasetError(ValueError):
    """Malformed schema or data, with the offending location when known."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple[int, ...] = ()
    role: str = PREDICTOR
    missing_allowed: bool = True

    def __post_init__(self):
        if not self.name:
            raise DatasetError("variable name must be non-empty")
        if self.kind not in KINDS:
            raise DatasetError(f"unknown kind {self.kind!r}", column=self.name)
        if self.role not in ROLES:
            raise DatasetError(f"unknown role {self.role!r}", column=self.name)
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if self.discrete:
            if len(levels) < 2:
                raise DatasetError("discrete variables need at least 2 levels", column=self.name)
            if any(b <= a for a, b in zip(levels, levels[1:])):
                raise DatasetError("levels must be strictly increasing", column=self.name)
        elif levels:
            raise DatasetError("continuous variables take no levels", column=self.name)
        if self.role == OUTCOME:
            if self.kind != BINARY or levels != (0, 1):
                raise DatasetError("outcome must be binary with levels [0, 1]", column=self.name)

    @property
    def discrete(self) -> bool:
        return self.kind != CONTINUOUS

    @property
    def level_range(self) -> str:
        if not self.discrete:
            return ""
        lo, hi = self.levels[0], self.levels[-1]
        if len(self.levels) == 2:
            return f"{{{lo},{hi}}}"
        return f"{{{lo},...,{hi}}}"

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "role": self.role,
             "missing_allowed": self.missing_allowed}
        if self.discrete:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSpec":
        try:
            return cls(
                name=d["name"],
                kind=d["kind"],
                levels=tuple(d.get("levels", ())),
                role=d.get("role", PREDICTOR),
                missing_allowed=bool(d.get("missing_allowed", True)),
            )
        except KeyError as exc:
            raise DatasetError(f"schema entry missing field {exc}") from None


def validate_schema(schema: Sequence[VariableSpec]) -> None:
    names = [v.name for v in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DatasetError(f"duplicate variable names: {', '.join(dupes)}")
    outcomes = [v for v in schema if v.role == OUTCOME]
    if len(outcomes) != 1:
        raise DatasetError(f"schema needs exactly one outcome variable, found {len(outcomes)}")


def schema_to_json(schema: Sequence[VariableSpec]) -> str:
    return json.dumps({"variables": [v.to_dict() for v in schema]}, indent=2) + "\n"


def schema_from_json(source) -> list[VariableSpec]:
    if isinstance(source, (bytes, bytearray)):
        source = source.decode("utf-8")
    elif hasattr(source, "read"):
        source = source.read()
        if isinstance(source, bytes):
            source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"schema is not valid JSON: {exc}") from None
    entries = doc["variables"] if isinstance(doc, dict) and "variables" in doc else doc
    if not isinstance(entries, list):
        raise DatasetError("schema must be a list of variables or {'variables': [...]}")
    schema = [VariableSpec.from_dict(e) for e in entries]
    validate_schema(schema)
    return schema


@dataclass(frozen=True, eq=False)
class Dataset:
    """n x p table; ``values[i, j]`` is NaN when cell (i, j) is missing."""

    schema: tuple[VariableSpec, ...]
    values: np.ndarray
    row_ids: tuple[str, ...] | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        schema = tuple(self.schema)
        object.__setattr__(self, "schema", schema)
        validate_schema(schema)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise DatasetError(f"values must be n x {len(schema)}, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {v.name: j for j, v in enumerate(schema)})
        if self.row_ids is not None and len(self.row_ids) != values.shape[0]:
            raise DatasetError("row_ids length does not match number of rows")
        for j, var in enumerate(schema):
            col = values[:, j]
            observed = ~np.isnan(col)
            if var.role == OUTCOME and not observed.all():
                i = int(np.flatnonzero(~observed)[0])
                raise DatasetError("outcome cannot be missing", row=i + 1, column=var.name)
            if var.discrete:
                ok = np.isin(col[observed], var.levels)
                if not ok.all():
                    i = int(np.flatnonzero(observed)[np.flatnonzero(~ok)[0]])
                    raise DatasetError(f"value {col[i]:g} not in levels {list(var.levels)}",
                                       row=i + 1, column=var.name)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    @property
    def outcome_name(self) -> str:
        return next(v.name for v in self.schema if v.role == OUTCOME)

    @property
    def predictor_names(self) -> list[str]:
        return [v.name for v in self.schema if v.role == PREDICTOR]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DatasetError("unknown variable", column=name) from None

    def variable(self, name: str) -> VariableSpec:
        return self.schema[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    @property
    def y(self) -> np.ndarray:
        return self.column(self.outcome_name).astype(np.int64)

    def matrix(self, names: Iterable[str] | None = None) -> np.ndarray:
        names = self.predictor_names if names is None else list(names)
        return self.values[:, [self.index(nm) for nm in names]]

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.values).any())

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        ids = None if self.row_ids is None else tuple(self.row_ids[i] for i in rows)
        return Dataset(self.schema, self.values[rows], ids)

    def select(self, predictors: Sequence[str]) -> "Dataset":
        """Keep the given predictors (in that order) plus the outcome."""
        keep = [self.index(nm) for nm in predictors] + [self.index(self.outcome_name)]
        return Dataset([self.schema[j] for j in keep], self.values[:, keep], self.row_ids)

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(self.schema, values, self.row_ids)

    def row_label(self, i: int) -> str:
        return self.row_ids[i] if self.row_ids is not None else str(i + 1)


def _parse_cell(text: str, var: VariableSpec, row: int) -> float:
    if text == MISSING:
        if not var.missing_allowed:
            raise DatasetError("missing value not allowed", row=row, column=var.name)
        return math.nan
    if var.discrete:
        try:
            v = int(text)
        except ValueError:
            raise DatasetError(f"expected an integer level, got {text!r}", row=row,
                               column=var.name) from None
        if v not in var.levels:
            raise DatasetError(f"level {v} out of range {list(var.levels)}", row=row,
                               column=var.name)
        return float(v)
    try:
        v = float(text)
    except ValueError:
        raise DatasetError(f"expected a number, got {text!r}", row=row, column=var.name) from None
    if math.isnan(v):
        raise DatasetError(f"use {MISSING!r} for missing values", row=row, column=var.name)
    return v


def _text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8-sig")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8-sig") if isinstance(data, bytes) else data
    return source


def load_dataset(csv_source, schema_source, *, allow_missing_outcome: bool = False) -> Dataset:
    """Parse a CSV table against its JSON schema sidecar.

    Both sources may be bytes, text, or file objects. Rows are numbered from 1
    (the header is row 0) in error messages.

    With ``allow_missing_outcome`` the CSV may omit the outcome column or
    leave its cells as "NA"; unknown outcomes are filled with zeros and
    should be ignored. This is how unlabeled "apply" sets are read.
    """
    schema = schema_from_json(schema_source) if not isinstance(schema_source, (list, tuple)) \
        else list(schema_source)
    validate_schema(schema)
    reader = csv.reader(io.StringIO(_text(csv_source)))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty CSV (no header row)") from None
    header = [h.strip() for h in header]
    names = [v.name for v in schema]
    outcome = next(v.name for v in schema if v.role == OUTCOME)
    expected = names
    unlabeled = False
    if header != names:
        without = [nm for nm in names if nm != outcome]
        if allow_missing_outcome and header == without:
            expected, unlabeled = without, True
        else:
            unknown = [h for h in header if h not in names]
            if unknown:
                raise DatasetError(f"unknown column {unknown[0]!r}", row=0, column=unknown[0])
            missing = [nm for nm in expected if nm not in header]
            if missing:
                raise DatasetError(f"column {missing[0]!r} absent from header", row=0,
                                   column=missing[0])
            raise DatasetError("header order does not match schema order", row=0)
    specs = [v for v in schema if v.name in expected]
    rows = []
    for r, cells in enumerate(reader, start=1):
        if not cells:
            continue
        if len(cells) != len(expected):
            raise DatasetError(f"expected {len(expected)} cells, got {len(cells)}", row=r)
        rows.append([0.0 if allow_missing_outcome and v.role == OUTCOME and c.strip() == MISSING
                     else _parse_cell(c.strip(), v, r) for c, v in zip(cells, specs)])
    values = np.array(rows, dtype=float).reshape(len(rows), len(expected))
    if unlabeled:
        full = np.zeros((len(rows), len(names)))
        full[:, [names.index(nm) for nm in expected]] = values
        values = full
    for r, row in enumerate(values, start=1):
        for j, v in enumerate(schema):
            if v.role == OUTCOME and math.isnan(row[j]):
                raise DatasetError("outcome cannot be missing", row=r, column=v.name)
    return Dataset(schema, values)


def read_dataset(csv_path, schema_path=None, **kwargs) -> Dataset:
    """File-path convenience around :func:`load_dataset`.

    The schema defaults to the sidecar ``<stem>.schema.json`` next to the CSV.
    """
    schema_path = schema_path or default_schema_path(csv_path)
    with open(csv_path, "rb") as fc, open(schema_path, "rb") as fs:
        return load_dataset(fc, fs, **kwargs)


def default_schema_path(csv_path) -> str:
    csv_path = str(csv_path)
    stem = csv_path[:-4] if csv_path.lower().endswith(".csv") else csv_path
    return stem + ".schema.json"


def format_cell(value: float, var: VariableSpec) -> str:
    if math.isnan(value):
        return MISSING
    if var.discrete:
        return str(int(value))
    return repr(float(value))


def serialize(dataset: Dataset, out: IO[str] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(dataset.names)
    for row in dataset.values:
        writer.writerow([format_cell(v, var) for v, var in zip(row, dataset.schema)])
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def write_dataset(dataset: Dataset, csv_path, schema_path=None) -> None:
    schema_path = schema_path or default_schema_path(csv_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        serialize(dataset, f)
    with open(schema_path, "w", encoding="utf-8") as f:
        f.write(schema_to_json(dataset.schema))


# -- normalization -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormalizationParams:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def __post_init__(self):
        if not np.array_equal(self.std == 0, self.constant):
            raise ValueError("constant flags must mark exactly the zero-std columns")

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        safe = np.where(self.constant, 1.0, self.std)
        Z = (X - self.mean) / safe
        Z[:, self.constant] = np.where(np.isnan(X[:, self.constant]), np.nan, 0.0)
        return Z

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        std = np.asarray(d["std"], dtype=float)
        return cls(np.asarray(d["mean"], dtype=float), std, std == 0)


def fit_normalization(X: np.ndarray, names: Sequence[str] | None = None) -> NormalizationParams:
    """Per-column mean and sample std (divisor n-1) over observed cells."""
    X = np.asarray(X, dtype=float)
    observed = ~np.isnan(X)
    counts = observed.sum(axis=0)
    short = np.flatnonzero(counts < 2)
    if short.size:
        j = int(short[0])
        col = names[j] if names is not None else j
        raise DatasetError("fewer than 2 observed values, cannot normalize", column=col)
    mean = np.nansum(X, axis=0) / counts
    dev = np.where(observed, X - mean, 0.0)
    std = np.sqrt((dev ** 2).sum(axis=0) / (counts - 1))
    # a column of identical values can leave rounding residue in the std
    constant = np.array([np.unique(X[observed[:, j], j]).size == 1 for j in range(X.shape[1])],
                        dtype=bool)
    # a spread below double resolution is treated as constant too
    constant |= ~(std > 0)
    std = np.where(constant, 0.0, std)
    return NormalizationParams(mean, std, constant)


def normalize(dataset: Dataset, names: Sequence[str] | None = None):
    """Standardize predictor columns to zero mean and unit sample std.

    Missing cells are ignored when estimating the moments and stay NaN in the
    output. Constant columns map to 0.0. Returns ``(Z, params)``.
    """
    names = dataset.predictor_names if names is None else list(names)
    X = dataset.matrix(names)
    params = fit_normalization(X, names)
    return params.transform(X), params


# -- discretization ----------------------------------------------------------

def discretize(values, n_bins: int) -> list:
    """Equal-frequency binning into codes ``1..n_bins``.

    A value's code is set by how many observed values lie strictly below it,
    so tied values share the lowest bin their run reaches. ``None``/NaN
    entries pass through as ``None``.
    """
    if n_bins not in (4, 5):
        raise ValueError(f"n_bins must be 4 or 5, got {n_bins}")
    arr = np.array([math.nan if v is None else float(v) for v in values], dtype=float)
    observed = arr[~np.isnan(arr)]
    if observed.size == 0 or np.unique(observed).size < 2:
        raise ValueError("nothing to discretize: fewer than 2 distinct observed values")
    ordered = np.sort(observed)
    below = np.searchsorted(ordered, arr, side="left")
    codes = below * n_bins // observed.size + 1
    return [None if math.isnan(v) else int(c) for v, c in zip(arr, codes)]
