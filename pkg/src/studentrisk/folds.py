"""Stratified fold assignment and seed plumbing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_seed(rng) -> int:
    """Reduce an int seed, a Generator or None to a non-negative int seed.

    A Generator is advanced by exactly one draw.
    """
    if rng is None:
        return 0
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    if isinstance(rng, (int, np.integer)):
        if rng < 0:
            raise ValueError("seed must be non-negative")
        return int(rng)
    raise TypeError(f"expected an int seed or numpy Generator, got {type(rng).__name__}")


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for (seed, key...), stable across runs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold: np.ndarray
    k: int
    seed: int

    def __post_init__(self):
        fold = np.asarray(self.fold, dtype=np.int64)
        fold.setflags(write=False)
        object.__setattr__(self, "fold", fold)
        if fold.size and (fold.min() < 0 or fold.max() >= self.k):
            raise ValueError("fold index out of range")
        if np.bincount(fold, minlength=self.k).min() == 0:
            raise ValueError("every fold must be non-empty")

    @property
    def n(self) -> int:
        return self.fold.size

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold != f)

    def splits(self):
        for f in range(self.k):
            yield self.train_rows(f), self.test_rows(f)


def _class_quotas(sizes: np.ndarray, n1: int, n: int) -> np.ndarray:
    # largest remainder on sizes * n1 / n, done in integers; ties -> lower fold
    num = sizes * n1
    base = num // n
    rem = num % n
    extra = n1 - int(base.sum())
    order = np.lexsort((np.arange(sizes.size), -rem))
    quota = base.copy()
    quota[order[:extra]] += 1
    return quota


def stratified_folds(y, k: int = 10, rng=None) -> FoldAssignment:
    """Assign rows to k folds preserving the class-1 proportion.

    Fold sizes differ by at most one (the first n mod k folds are larger).
    Each fold's class-1 quota is its proportional share rounded by the
    largest-remainder rule, so every quota is within one of exact. Rows are
    shuffled within their class and dealt out to fill the quotas.
    """
    y = np.asarray(y).astype(np.int64)
    n = y.size
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    seed = as_seed(rng)
    gen = np.random.default_rng(seed)
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    ones = np.flatnonzero(y == 1)
    zeros = np.flatnonzero(y != 1)
    q1 = _class_quotas(sizes, ones.size, n)
    q0 = sizes - q1
    ones = gen.permutation(ones)
    zeros = gen.permutation(zeros)
    fold = np.empty(n, dtype=np.int64)
    fold[ones] = np.repeat(np.arange(k), q1)
    fold[zeros] = np.repeat(np.arange(k), q0)
    return FoldAssignment(fold, k, seed)
