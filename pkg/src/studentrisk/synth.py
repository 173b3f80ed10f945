"""Seeded synthetic student cohorts.

Each predictor is drawn independently from its level marginal. Success
follows a latent logistic model on the standardized levels, so logistic
regression is correctly specified on generated data and effect sizes are
known in advance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classifiers import sigmoid
from .dataset import (BINARY, ORDINAL, OUTCOME, PREDICTOR, Dataset, VariableSpec)
from .folds import as_seed, derive_seed

OUTCOME_NAME = "success"


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class VariableMarginal:
    name: str
    levels: tuple
    probs: tuple
    effect: float = 0.0

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        probs = tuple(float(q) for q in self.probs)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)
        if len(levels) < 2 or len(levels) != len(probs):
            raise SynthError(f"{self.name}: need at least 2 levels, one probability each")
        if any(q < 0 for q in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise SynthError(f"{self.name}: probabilities must be non-negative and sum to 1")
        if not math.isfinite(self.effect):
            raise SynthError(f"{self.name}: effect must be finite")

    @property
    def kind(self) -> str:
        return BINARY if self.levels == (0, 1) else ORDINAL

    def moments(self):
        lv = np.asarray(self.levels, dtype=float)
        q = np.asarray(self.probs)
        mean = float(q @ lv)
        return mean, float(math.sqrt(q @ (lv - mean) ** 2))

    def to_dict(self) -> dict:
        return {"name": self.name, "levels": list(self.levels), "probs": list(self.probs),
                "effect": self.effect}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["levels"]), tuple(d["probs"]), float(d.get("effect", 0.0)))


def uniform(name: str, levels, effect: float = 0.0) -> VariableMarginal:
    levels = tuple(levels)
    return VariableMarginal(name, levels, tuple([1.0 / len(levels)] * len(levels)), effect)


def binary(name: str, p1: float, effect: float = 0.0) -> VariableMarginal:
    return VariableMarginal(name, (0, 1), (1.0 - p1, p1), effect)


@dataclass(frozen=True)
class CohortSpec:
    """Cohort size, success target and per-variable marginals and effects.

    Give exactly one of ``success_rate`` (Bernoulli outcomes whose expected
    rate is calibrated) or ``pass_count`` (exactly that many successes).
    """

    n: int
    variables: tuple
    success_rate: float | None = None
    pass_count: int | None = None
    missing_rate: float = 0.0
    seed: int = 0
    name: str = "cohort"

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if self.n < 1:
            raise SynthError("n must be positive")
        if (self.success_rate is None) == (self.pass_count is None):
            raise SynthError("give exactly one of success_rate and pass_count")
        if self.success_rate is not None and not 0 < self.success_rate < 1:
            raise SynthError("success_rate must be in (0, 1)")
        if self.pass_count is not None and not 0 <= self.pass_count <= self.n:
            raise SynthError(f"pass_count {self.pass_count} is infeasible for n={self.n}")
        if not 0 <= self.missing_rate < 1:
            raise SynthError("missing_rate must be in [0, 1)")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names) or OUTCOME_NAME in names:
            raise SynthError("variable names must be unique and differ from the outcome")

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "success_rate": self.success_rate,
                "pass_count": self.pass_count, "missing_rate": self.missing_rate,
                "seed": self.seed, "variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, d) -> "CohortSpec":
        return cls(int(d["n"]), tuple(VariableMarginal.from_dict(v) for v in d["variables"]),
                   d.get("success_rate"), d.get("pass_count"), float(d.get("missing_rate", 0.0)),
                   int(d.get("seed", 0)), d.get("name", "cohort"))

    def schema(self) -> list:
        out = [VariableSpec(v.name, v.kind, v.levels, PREDICTOR, True) for v in self.variables]
        out.append(VariableSpec(OUTCOME_NAME, BINARY, (0, 1), OUTCOME, False))
        return out


@dataclass
class GenerationManifest:
    spec: dict
    seed: int
    intercept: float | None
    pass_count: int
    missing_cells: int
    marginals: dict
    version: str = __version__

    def to_dict(self) -> dict:
        return {"spec": self.spec, "seed": self.seed, "intercept": self.intercept,
                "pass_count": self.pass_count, "missing_cells": self.missing_cells,
                "marginals": self.marginals, "version": self.version}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> "GenerationManifest":
        return cls(d["spec"], int(d["seed"]), d.get("intercept"), int(d["pass_count"]),
                   int(d.get("missing_cells", 0)), d.get("marginals", {}),
                   d.get("version", __version__))


def solve_intercept(eta, rate: float, tol: float = 1e-10) -> float:
    """Intercept b with mean(sigmoid(b + eta)) == rate, by bisection."""
    eta = np.asarray(eta, dtype=float)
    lo = math.log(rate / (1 - rate)) - float(eta.max()) - 1.0
    hi = math.log(rate / (1 - rate)) - float(eta.min()) + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sigmoid(mid + eta).mean() < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inject_missing(dataset: Dataset, rate: float, rng=None) -> Dataset:
    """Blank each predictor cell independently with probability ``rate``."""
    if not 0 <= rate < 1:
        raise SynthError("missing rate must be in [0, 1)")
    if rate == 0:
        return dataset
    gen = np.random.default_rng(as_seed(rng))
    values = dataset.values.copy()
    cols = [dataset.index(nm) for nm in dataset.predictor_names]
    mask = gen.random((dataset.n, len(cols))) < rate
    block = values[:, cols]
    block[mask] = np.nan
    values[:, cols] = block
    return dataset.with_values(values)


def generate_cohort(spec: CohortSpec, rng=None):
    """Draw a cohort; returns ``(dataset, manifest)``.

    ``rng`` overrides ``spec.seed`` when given.
    """
    seed = spec.seed if rng is None else as_seed(rng)
    gen = np.random.default_rng(derive_seed(seed, 0))
    n = spec.n
    cols, eta = [], np.zeros(n)
    for var in spec.variables:
        x = gen.choice(np.asarray(var.levels, dtype=float), size=n, p=np.asarray(var.probs))
        cols.append(x)
        mean, sd = var.moments()
        if var.effect != 0 and sd > 0:
            eta += var.effect * (x - mean) / sd
    u = gen.random(n)
    intercept = None
    if spec.pass_count is None:
        intercept = solve_intercept(eta, spec.success_rate)
        y = (u < sigmoid(intercept + eta)).astype(float)
    else:
        # logistic latent score; the pass_count highest scores succeed
        u = np.clip(u, 1e-300, 1 - 1e-16)
        z = eta + np.log(u) - np.log1p(-u)
        order = np.lexsort((np.arange(n), -z))
        y = np.zeros(n)
        y[order[: spec.pass_count]] = 1.0
    values = np.column_stack(cols + [y]) if cols else y.reshape(-1, 1)
    dataset = Dataset(spec.schema(), values, tuple(f"s{i + 1}" for i in range(n)))
    dataset = inject_missing(dataset, spec.missing_rate, derive_seed(seed, 1))
    marginals = {}
    for j, var in enumerate(spec.variables):
        col = dataset.values[:, j]
        obs = col[~np.isnan(col)]
        marginals[var.name] = [float(np.mean(obs == lv)) if obs.size else 0.0
                               for lv in var.levels]
    manifest = GenerationManifest(spec.to_dict(), seed, intercept, int(y.sum()),
                                  int(dataset.missing_mask.sum()), marginals)
    return dataset, manifest


def replay(manifest: GenerationManifest | dict) -> Dataset:
    """Regenerate the dataset a manifest describes."""
    if isinstance(manifest, dict):
        manifest = GenerationManifest.from_dict(manifest)
    return generate_cohort(CohortSpec.from_dict(manifest.spec), manifest.seed)[0]


# -- fixtures ----------------------------------------------------------------

def _skewed(n_levels: int, tilt: float) -> tuple:
    # geometric tilt towards the top (tilt > 0) or bottom (tilt < 0) level
    w = np.exp(tilt * np.arange(n_levels))
    return tuple((w / w.sum()).tolist())


def questionnaire(male: float, parents: float, think_pass: float, never_smoke: float,
                  classics_tilt: float, languages_tilt: float) -> tuple:
    """Questionnaire-like predictors: demographic, history, behaviour, perception."""
    return (
        binary("male", male),
        binary("live_with_parents", parents),
        VariableMarginal("hours_classics", (1, 2, 3, 4), _skewed(4, classics_tilt), 0.1),
        VariableMarginal("hours_languages", (1, 2, 3, 4), _skewed(4, languages_tilt)),
        VariableMarginal("hours_mathematics", (1, 2, 3, 4), _skewed(4, 0.2), 0.3),
        VariableMarginal("highschool_rank", (1, 2, 3, 4, 5), _skewed(5, 0.1), 0.45),
        VariableMarginal("highschool_grade", (1, 2, 3, 4, 5), _skewed(5, -0.1), 0.35),
        VariableMarginal("classes_attended", (1, 2, 3, 4, 5), _skewed(5, 1.2), 0.35),
        VariableMarginal("courses_not_attended", (1, 2, 3, 4), _skewed(4, -1.0), -0.3),
        binary("think_will_pass", think_pass, 0.3),
        VariableMarginal("estimated_success", tuple(range(1, 11)), _skewed(10, 0.25), 0.5),
        VariableMarginal("lessons_easy", (1, 2, 3, 4, 5), _skewed(5, 0.1), 0.35),
        VariableMarginal("well_prepared", (1, 2, 3, 4, 5), _skewed(5, 0.0), 0.3),
        binary("right_choice", 0.9, 0.25),
        VariableMarginal("study_time_needed", (1, 2, 3, 4, 5), _skewed(5, 0.0)),
        VariableMarginal("go_fast_when_studying", (1, 2, 3, 4), _skewed(4, 0.0), -0.2),
        binary("never_smoke", never_smoke),
        VariableMarginal("alcohol", (1, 2, 3, 4), _skewed(4, -0.5)),
    )


# name -> (n, pass count, male, parents, think pass, never smoke, classics, languages)
FIXTURES = {
    "t1-france": (614, 436, 0.57, 0.45, 0.86, 0.69, -1.0, 0.0),
    "t1-belgium": (169, 66, 0.57, 0.75, 0.93, 0.81, 0.8, 0.6),
    "t1-mixed": (783, 502, 0.57, 0.52, 0.87, 0.71, -0.6, 0.1),
    "t2-mixed": (214, 89, 0.68, 0.71, 0.92, 0.76, 0.6, 0.5),
}


def paper_fixture(name: str, seed: int = 0, missing_rate: float = 0.0) -> CohortSpec:
    """Cohort spec with the published cohort size and exact pass count."""
    if name not in FIXTURES:
        raise SynthError(f"unknown fixture {name!r}; valid names: {', '.join(FIXTURES)}")
    n, passes, *marg = FIXTURES[name]
    return CohortSpec(n, questionnaire(*marg), pass_count=passes, missing_rate=missing_rate,
                      seed=seed, name=name)


def strong_signal_spec(n: int = 783, n_strong: int = 5, effect: float = 1.5,
                       n_noise: int = 15, missing_rate: float = 0.0, seed: int = 0,
                       success_rate: float = 0.64) -> CohortSpec:
    """A few strongly predictive 5-level items among uninformative ones."""
    strong = [uniform(f"strong_{i + 1}", range(1, 6), effect) for i in range(n_strong)]
    noise = [uniform(f"noise_{i + 1}", range(1, 6)) for i in range(n_noise)]
    return CohortSpec(n, tuple(strong + noise), success_rate=success_rate,
                      missing_rate=missing_rate, seed=seed, name="strong-signal")


def null_spec(n: int = 1000, n_vars: int = 20, seed: int = 0,
              success_rate: float = 0.5) -> CohortSpec:
    """All effects zero: outcome independent of every predictor."""
    vars_ = [uniform(f"v{i + 1}", range(1, 6)) for i in range(n_vars)]
    return CohortSpec(n, tuple(vars_), success_rate=success_rate, seed=seed, name="null")
