"""Nearest-neighbour median imputation of missing questionnaire answers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, DatasetError, normalize

# Distances are compared after rounding so that values equal up to
# floating-point noise tie and fall back to the row-index rule.
DISTANCE_DECIMALS = 9


@dataclass(frozen=True)
class ImputationConfig:
    k: int = 10

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ImputedCell:
    row: int
    column: str
    value: float
    neighbors: tuple[int, ...]
    distances: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"row": self.row, "column": self.column, "value": self.value,
                "neighbors": list(self.neighbors), "distances": list(self.distances)}


@dataclass(frozen=True)
class ImputationLog:
    cells: tuple[ImputedCell, ...] = ()

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def to_json(self) -> str:
        return json.dumps({"imputed": [c.to_dict() for c in self.cells]}, indent=2) + "\n"


def row_distance(Z: np.ndarray, a: int, b: int) -> float:
    """Euclidean distance over co-observed columns, rescaled by sqrt(p/d).

    ``Z`` holds standardized predictors only (NaN = missing). The rescaling
    keeps rows with different missingness patterns comparable.
    """
    za, zb = Z[a], Z[b]
    both = ~np.isnan(za) & ~np.isnan(zb)
    d = int(both.sum())
    if d == 0:
        raise ValueError(f"rows {a} and {b} share no observed predictor")
    diff = za[both] - zb[both]
    return math.sqrt(float(diff @ diff) * Z.shape[1] / d)


def _distances_from(Z: np.ndarray, observed: np.ndarray, i: int) -> np.ndarray:
    """Distances from row ``i`` to every row; NaN where undefined."""
    both = observed & observed[i]
    d = both.sum(axis=1)
    diff = np.where(both, Z - np.where(observed[i], Z[i], 0.0), 0.0)
    sq = np.einsum("ij,ij->i", diff, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(sq * Z.shape[1] / d)
    dist[d == 0] = np.nan
    return dist


def lower_median(values) -> float:
    """The ceil(m/2)-th order statistic, which is always one of the values."""
    s = np.sort(np.asarray(values, dtype=float))
    if s.size == 0:
        raise ValueError("median of empty neighbour set")
    return float(s[(s.size + 1) // 2 - 1])


def impute_missing(dataset: Dataset, config: ImputationConfig | None = None):
    """Fill every missing predictor cell from its k most similar rows.

    Similarity is :func:`row_distance` on standardized predictors (outcome
    excluded). Candidates for cell (i, j) are rows with column j observed;
    they are ranked by (distance, row index) and the lower median of the
    first k supplies the value. All cells are imputed from the original
    table, so the order of imputation does not matter.

    Returns ``(completed_dataset, ImputationLog)``.
    """
    config = config or ImputationConfig()
    if not dataset.has_missing:
        return dataset, ImputationLog()
    names = dataset.predictor_names
    for name in names:
        if np.isnan(dataset.column(name)).all():
            raise DatasetError("column is entirely missing, cannot impute", column=name)
    Z, _ = normalize(dataset, names)
    observed = ~np.isnan(Z)
    X = dataset.matrix(names)
    cols = [dataset.index(nm) for nm in names]
    out = dataset.values.copy()
    logged = []
    k = int(config.k)
    for i in np.flatnonzero((~observed).any(axis=1)):
        dist = _distances_from(Z, observed, int(i))
        rounded = np.round(dist, DISTANCE_DECIMALS)
        for j in np.flatnonzero(~observed[i]):
            cand = np.flatnonzero(observed[:, j] & ~np.isnan(dist))
            if cand.size == 0:
                raise DatasetError("no comparable row has this column observed",
                                   row=int(i) + 1, column=names[j])
            # lexsort: last key is primary; cand is ascending so index breaks ties
            order = cand[np.lexsort((cand, rounded[cand]))][:k]
            value = lower_median(X[order, j])
            out[i, cols[j]] = value
            logged.append(ImputedCell(int(i), names[j], value, tuple(int(r) for r in order),
                                      tuple(float(dist[r]) for r in order)))
    return dataset.with_values(out), ImputationLog(tuple(logged))
