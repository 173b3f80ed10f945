"""CART classification trees, cost-complexity pruning and random forests.

Splits are ordinal (``x <= t`` goes left) and chosen by Gini impurity
decrease. Growth and routing run in the compiled kernels when available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .folds import as_seed, derive_seed, stratified_folds


@dataclass(frozen=True)
class GrowthConfig:
    """Node-size limits. ``split_ties`` also accepts zero-gain splits when
    nothing better exists, so growth only stops at pure or unsplittable nodes."""

    min_split: int = 20
    min_bucket: int = 7
    split_ties: bool = False

    def __post_init__(self):
        if self.min_split < 1 or self.min_bucket < 1:
            raise ValueError("min_split and min_bucket must be >= 1")


# grown until every leaf is pure or holds identical rows
FULL_GROWTH = GrowthConfig(1, 1, split_ties=True)


def encode(X: np.ndarray):
    """Integer-code each column by rank of its distinct values.

    Returns ``(codes, levels)`` where ``levels[f]`` is the sorted array of
    distinct values of column f.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if np.isnan(X).any():
        raise ValueError("training data contains missing values; impute first")
    codes = np.empty(X.shape, dtype=np.int32)
    levels = []
    for f in range(X.shape[1]):
        vals, inv = np.unique(X[:, f], return_inverse=True)
        codes[:, f] = inv.reshape(-1)
        levels.append(vals)
    return np.ascontiguousarray(codes), levels


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Flat binary tree; node 0 is the root and leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    config: GrowthConfig = GrowthConfig()
    n_train: int = 0
    node_ids: np.ndarray | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.node_ids is None:
            object.__setattr__(self, "node_ids", np.arange(self.feature.size))

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def leaf_class(self) -> np.ndarray:
        # ties go to class 0
        return (self.counts[:, 1] > self.counts[:, 0]).astype(np.int64)

    @property
    def resubstitution_errors(self) -> int:
        leaves = self.is_leaf
        return int(np.minimum(self.counts[leaves, 0], self.counts[leaves, 1]).sum())

    @property
    def resubstitution_error(self) -> float:
        return self.resubstitution_errors / self.n_train if self.n_train else 0.0

    def apply(self, X: np.ndarray, kernels=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        leaves = _kernels.apply_trees(X, self.feature, self.threshold, self.left, self.right,
                                      np.zeros(1, dtype=np.int64), kernels=kernels)
        return leaves[:, 0]

    def predict(self, X: np.ndarray, kernels=None) -> np.ndarray:
        return self.leaf_class[self.apply(X, kernels)]

    def to_dict(self) -> dict:
        def node(i):
            if self.feature[i] < 0:
                return {"class": int(self.leaf_class[i]),
                        "counts": [int(self.counts[i, 0]), int(self.counts[i, 1])]}
            return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                    "counts": [int(self.counts[i, 0]), int(self.counts[i, 1])],
                    "left": node(self.left[i]), "right": node(self.right[i])}
        return {"min_split": self.config.min_split, "min_bucket": self.config.min_bucket,
                "split_ties": self.config.split_ties,
                "n_train": self.n_train, "alpha": self.alpha, "root": node(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        feature, threshold, left, right, counts = [], [], [], [], []

        def visit(nd):
            i = len(feature)
            feature.append(nd.get("feature", -1))
            threshold.append(nd.get("threshold", math.nan))
            left.append(-1)
            right.append(-1)
            counts.append(nd["counts"])
            if "left" in nd:
                left[i] = visit(nd["left"])
                right[i] = visit(nd["right"])
            return i

        visit(d["root"])
        return cls(np.array(feature, dtype=np.int32), np.array(threshold, dtype=float),
                   np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                   np.array(counts, dtype=np.int64).reshape(-1, 2),
                   GrowthConfig(d.get("min_split", 20), d.get("min_bucket", 7),
                                bool(d.get("split_ties", False))),
                   int(d.get("n_train", 0)), alpha=float(d.get("alpha", 0.0)))


def _tree_from_kernel(raw, levels, config, n_train) -> DecisionTree:
    feature, split, left, right, c0, c1 = raw
    threshold = np.full(feature.size, np.nan)
    for i in np.flatnonzero(feature >= 0):
        threshold[i] = levels[feature[i]][split[i]]
    return DecisionTree(feature, threshold, left, right, np.stack([c0, c1], axis=1),
                        config, n_train)


def grow_tree(X, y, config: GrowthConfig = GrowthConfig(), *, kernels=None) -> DecisionTree:
    """Recursive binary partitioning by Gini decrease.

    A node becomes a leaf when it is pure, holds fewer than ``min_split``
    rows, or no split leaving ``min_bucket`` rows on each side lowers the
    impurity. Equal-gain candidates resolve to the lower feature index, then
    the lower threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] != y.size:
        raise ValueError("X and y disagree on the number of rows")
    codes, levels = encode(X)
    n_levels = np.array([len(v) for v in levels], dtype=np.int64)
    sample = np.arange(y.size, dtype=np.int64)
    raw = _kernels.grow_tree(codes, n_levels, y, sample, config.min_split, config.min_bucket,
                             X.shape[1], 0, config.split_ties, kernels=kernels)
    return _tree_from_kernel(raw, levels, config, y.size)


def predict_tree(tree: DecisionTree, row) -> int:
    return int(tree.predict(np.asarray(row, dtype=float).reshape(1, -1))[0])


# -- cost-complexity pruning -------------------------------------------------

@dataclass(frozen=True)
class PruningStep:
    alpha: float
    tree: DecisionTree
    n_leaves: int
    error: float
    alpha_exact: Fraction = Fraction(0)


@dataclass(frozen=True)
class PruningPath:
    steps: tuple[PruningStep, ...]

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.steps])

    @property
    def config(self) -> GrowthConfig:
        return self.steps[0].tree.config

    def index_for(self, alpha: float) -> int:
        """Index of the subtree optimal at complexity ``alpha``."""
        return max(int(np.searchsorted(self.alphas, alpha, side="right")) - 1, 0)

    def subtree_for(self, alpha: float) -> DecisionTree:
        return self.steps[self.index_for(alpha)].tree


def _subtree(tree: DecisionTree, collapsed: np.ndarray, alpha: float) -> DecisionTree:
    keep = []
    stack = [0]
    while stack:
        i = stack.pop()
        keep.append(i)
        if tree.feature[i] >= 0 and not collapsed[i]:
            stack.append(tree.right[i])
            stack.append(tree.left[i])
    remap = {old: new for new, old in enumerate(keep)}
    keep = np.array(keep)
    leaf = (tree.feature[keep] < 0) | collapsed[keep]
    feature = np.where(leaf, -1, tree.feature[keep]).astype(np.int32)
    threshold = np.where(leaf, np.nan, tree.threshold[keep])
    left = np.array([-1 if lf else remap[tree.left[o]] for o, lf in zip(keep, leaf)], np.int32)
    right = np.array([-1 if lf else remap[tree.right[o]] for o, lf in zip(keep, leaf)], np.int32)
    return DecisionTree(feature, threshold, left, right, tree.counts[keep], tree.config,
                        tree.n_train, tree.node_ids[keep], alpha)


def _weakest_links(tree: DecisionTree, collapsed: np.ndarray):
    """(error drop, leaves removed + 1) for each active internal node."""
    err = np.minimum(tree.counts[:, 0], tree.counts[:, 1])
    out = {}

    def visit(i):
        if tree.feature[i] < 0 or collapsed[i]:
            return int(err[i]), 1
        el, ll = visit(tree.left[i])
        er, lr = visit(tree.right[i])
        sub_err, leaves = el + er, ll + lr
        out[i] = Fraction(int(err[i]) - sub_err, leaves - 1)
        return sub_err, leaves

    visit(0)
    return out


def pruning_path(tree: DecisionTree, X=None, y=None) -> PruningPath:
    """Nested weakest-link subtree sequence.

    Each step collapses every internal node whose per-leaf error increase
    ``(R(t) - R(T_t)) / (|T_t| - 1)`` is minimal. The first entry (alpha 0)
    already has the zero-cost splits removed; the last is the root alone.
    ``X`` and ``y`` are accepted for interface symmetry; the node counts
    stored at growth time are sufficient.
    """
    n = tree.n_train
    scale = Fraction(1, n) if n else Fraction(1)
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    steps = []
    level = Fraction(0)
    while True:
        # collapsing a node can lower its ancestors' cost, so repeat to a fixed point
        while True:
            links = _weakest_links(tree, collapsed)
            hit = [i for i, g in links.items() if g <= level]
            if not hit:
                break
            collapsed[hit] = True
        sub = _subtree(tree, collapsed, float(level * scale))
        steps.append(PruningStep(float(level * scale), sub, sub.n_leaves,
                                 sub.resubstitution_error, level * scale))
        if not links:
            break
        level = min(links.values())
    return PruningPath(tuple(steps))


@dataclass(frozen=True)
class PruningCV:
    alphas: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    chosen: int


def _cv_pruning(path: PruningPath, X, y, folds: int, rng, kernels=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    n = y.size
    alphas = path.alphas
    k = len(path)
    betas = np.empty(k)
    for i in range(k - 1):
        betas[i] = math.sqrt(alphas[i] * alphas[i + 1])
    betas[-1] = math.inf  # the root row stands for every alpha past the last breakpoint
    wrong = np.zeros(k)
    fa = stratified_folds(y, min(folds, n), rng)
    for train, test in fa.splits():
        t = grow_tree(X[train], y[train], path.config, kernels=kernels)
        sub = pruning_path(t)
        for i, beta in enumerate(betas):
            wrong[i] += int((sub.subtree_for(beta).predict(X[test], kernels) != y[test]).sum())
    err = wrong / n
    se = np.sqrt(err * (1 - err) / n)
    return err, se


def prune(path: PruningPath, X, y, variant: int = 1, folds: int = 10, rng=None,
          kernels=None) -> DecisionTree:
    """Pick a subtree from ``path`` by internal stratified cross-validation.

    Variant 1 takes the minimum-CV-error subtree; variant 2 takes the
    largest alpha whose CV error is within one standard error of that
    minimum. Exact CV-error ties go to the larger alpha.
    """
    return prune_with_details(path, X, y, variant, folds, rng, kernels).tree


@dataclass(frozen=True)
class PruneResult:
    tree: DecisionTree
    cv: PruningCV


def prune_with_details(path, X, y, variant=1, folds=10, rng=None, kernels=None) -> PruneResult:
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    if len(path) == 1:
        return PruneResult(path[0].tree, PruningCV(path.alphas, np.zeros(1), np.zeros(1), 0))
    err, se = _cv_pruning(path, X, y, folds, rng, kernels)
    best = int(np.flatnonzero(err == err.min())[-1])
    if variant == 1:
        chosen = best
    else:
        chosen = int(np.flatnonzero(err <= err[best] + se[best])[-1])
    return PruneResult(path[chosen].tree, PruningCV(path.alphas, err, se, chosen))


# -- random forests ----------------------------------------------------------

FOREST_GROWTH = GrowthConfig(2, 1)


@dataclass(eq=False)
class RandomForest:
    trees: list
    samples: list
    mtry: int
    seed: int
    bootstrap: bool = True
    _packed: tuple | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _pack(self):
        if self._packed is None:
            sizes = np.array([t.n_nodes for t in self.trees])
            roots = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
            shift = lambda arr, off: np.where(arr >= 0, arr + off, -1)  # noqa: E731
            feature = np.concatenate([t.feature for t in self.trees]).astype(np.int32)
            threshold = np.concatenate([t.threshold for t in self.trees])
            left = np.concatenate([shift(t.left, o) for t, o in zip(self.trees, roots)])
            right = np.concatenate([shift(t.right, o) for t, o in zip(self.trees, roots)])
            leaf_class = np.concatenate([t.leaf_class for t in self.trees])
            self._packed = (feature, threshold, left.astype(np.int32), right.astype(np.int32),
                            roots, leaf_class)
        return self._packed

    def votes(self, X, kernels=None) -> np.ndarray:
        """Number of trees voting class 1 for each row."""
        feature, threshold, left, right, roots, leaf_class = self._pack()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        leaves = _kernels.apply_trees(X, feature, threshold, left, right, roots,
                                      kernels=kernels)
        return leaf_class[leaves].sum(axis=1)

    def predict_proba(self, X, kernels=None) -> np.ndarray:
        return self.votes(X, kernels) / self.n_trees

    def predict(self, X, kernels=None) -> np.ndarray:
        # strict majority; an exact tie is class 0
        return (2 * self.votes(X, kernels) > self.n_trees).astype(np.int64)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "mtry": self.mtry, "n_trees": self.n_trees,
                "bootstrap": self.bootstrap,
                "min_split": FOREST_GROWTH.min_split, "min_bucket": FOREST_GROWTH.min_bucket,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        trees = [DecisionTree.from_dict(t) for t in d["trees"]]
        return cls(trees, [None] * len(trees), int(d["mtry"]), int(d["seed"]),
                   bool(d.get("bootstrap", True)))


def default_mtry(p: int) -> int:
    return max(1, int(math.floor(math.sqrt(p))))


def fit_forest(X, y, n_trees: int = 1000, mtry: int | None = None, rng=None, *,
               bootstrap: bool = True, kernels=None) -> RandomForest:
    """Bagged unpruned trees with ``mtry`` candidate features per node.

    Tree i draws its bootstrap rows and its node-sampling stream from a
    generator seeded by (forest seed, i), so the forest is reproducible and
    independent of the order in which trees are built.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    n, p = X.shape
    if n < 2:
        raise ValueError("a forest needs at least 2 rows")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    mtry = default_mtry(p) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be in [1, {p}], got {mtry}")
    seed = as_seed(rng)
    codes, levels = encode(X)
    n_levels = np.array([len(v) for v in levels], dtype=np.int64)
    trees, samples = [], []
    for i in range(n_trees):
        gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        sample = gen.integers(0, n, size=n) if bootstrap else np.arange(n)
        sample = sample.astype(np.int64)
        node_seed = int(gen.integers(0, 2**64, dtype=np.uint64))
        raw = _kernels.grow_tree(codes, n_levels, y, sample, FOREST_GROWTH.min_split,
                                 FOREST_GROWTH.min_bucket, mtry, node_seed, kernels=kernels)
        trees.append(_tree_from_kernel(raw, levels, FOREST_GROWTH, n))
        samples.append(sample)
    return RandomForest(trees, samples, mtry, seed, bootstrap)


def predict_forest(forest: RandomForest, row) -> int:
    return int(forest.predict(np.asarray(row, dtype=float).reshape(1, -1))[0])


def mtry_errors(X, y, n_trees: int, rng=None, objective: str = "cv", candidates=None,
                folds: int = 10, kernels=None) -> dict:
    """Error of a forest for each candidate mtry.

    The forest for candidate m (and CV fold f) is seeded from (seed, m[, f]),
    so any single candidate can be re-evaluated independently.
    """
    if objective not in ("resub", "cv"):
        raise ValueError("objective must be 'resub' or 'cv'")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    p = X.shape[1]
    candidates = list(range(1, p + 1)) if candidates is None else list(candidates)
    seed = as_seed(rng)
    errors = {}
    if objective == "cv":
        fa = stratified_folds(y, min(folds, y.size), derive_seed(seed, 0))
    for m in candidates:
        if objective == "resub":
            forest = fit_forest(X, y, n_trees, m, derive_seed(seed, 1, m), kernels=kernels)
            errors[m] = float(np.mean(forest.predict(X, kernels) != y))
        else:
            wrong = 0
            for f, (train, test) in enumerate(fa.splits()):
                forest = fit_forest(X[train], y[train], n_trees, m,
                                    derive_seed(seed, 2, m, f), kernels=kernels)
                wrong += int((forest.predict(X[test], kernels) != y[test]).sum())
            errors[m] = wrong / y.size
    return errors


def optimize_mtry(X, y, n_trees: int, rng=None, objective: str = "cv", candidates=None,
                  folds: int = 10, kernels=None) -> int:
    """Enumerate mtry candidates (default 1..p); ties favour the smaller value."""
    errors = mtry_errors(X, y, n_trees, rng, objective, candidates, folds, kernels)
    return min(errors, key=lambda m: (errors[m], m))
