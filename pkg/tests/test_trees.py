import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import check_path_against_enumeration

from studentrisk.trees import (FOREST_GROWTH, FULL_GROWTH, DecisionTree, GrowthConfig,
                               RandomForest, fit_forest, grow_tree, mtry_errors, optimize_mtry,
                               predict_forest, predict_tree, prune, prune_with_details,
                               pruning_path)


def conflict_free(seed, n=30, p=3, levels=4):
    """Random rows with labels; duplicated rows share one label."""
    rng = np.random.default_rng(seed)
    X = rng.integers(1, levels + 1, size=(n, p)).astype(float)
    label = {}
    y = np.array([label.setdefault(tuple(r), int(rng.integers(0, 2))) for r in X])
    return X, y


def gini(c0, c1):
    n = c0 + c1
    return 1 - (c0 / n) ** 2 - (c1 / n) ** 2 if n else 0.0


# -- growth -----------------------------------------------------------------

def test_single_split_separable():
    X = np.array([[1], [2], [2], [3], [4], [5]], dtype=float)
    y = np.array([0, 0, 0, 1, 1, 1])
    t = grow_tree(X, y, GrowthConfig(1, 1))
    assert t.n_leaves == 2 and t.feature[0] == 0 and t.threshold[0] == 2
    assert t.resubstitution_error == 0


def test_threshold_boundary_goes_left():
    X = np.array([[1], [2], [3], [4]], dtype=float)
    t = grow_tree(X, np.array([0, 0, 1, 1]), GrowthConfig(1, 1))
    assert predict_tree(t, [2.0]) == 0
    assert predict_tree(t, [2.5]) == 1


def test_conflicting_duplicates_leaf_class_zero():
    t = grow_tree(np.array([[1.0], [1.0]]), np.array([1, 0]), FULL_GROWTH)
    assert t.n_leaves == 1 and t.counts[0].tolist() == [1, 1]
    assert predict_tree(t, [1.0]) == 0


def test_xor_needs_zero_gain_split():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    assert grow_tree(X, y, GrowthConfig(1, 1)).n_leaves == 1
    full = grow_tree(X, y, FULL_GROWTH)
    assert full.resubstitution_error == 0
    assert (full.predict(X) == y).all()


@pytest.mark.parametrize("seed", range(20))
def test_full_growth_zero_resubstitution(seed):
    X, y = conflict_free(seed, n=60, p=4)
    t = grow_tree(X, y, FULL_GROWTH)
    assert t.resubstitution_error == 0
    assert (t.predict(X) == y).all()


@pytest.mark.parametrize("seed", range(10))
def test_split_invariants(seed):
    X, y = conflict_free(seed, n=80, p=4)
    cfg = GrowthConfig(6, 3)
    t = grow_tree(X, y, cfg)
    for i in np.flatnonzero(~t.is_leaf):
        l, r = t.left[i], t.right[i]
        c, cl, cr = t.counts[i], t.counts[l], t.counts[r]
        assert (cl + cr == c).all()
        assert cl.sum() >= cfg.min_bucket and cr.sum() >= cfg.min_bucket
        assert c.sum() >= cfg.min_split
        weighted = (cl.sum() * gini(*cl) + cr.sum() * gini(*cr)) / c.sum()
        assert weighted < gini(*c)
    # every training row reaches exactly one leaf
    leaves = t.apply(X)
    assert t.is_leaf[leaves].all()
    assert np.bincount(leaves, minlength=t.n_nodes)[t.is_leaf].sum() == len(y)


def test_missing_values_rejected():
    t = grow_tree(np.array([[1.0], [2.0]]), np.array([0, 1]), GrowthConfig(1, 1))
    with pytest.raises(ValueError):
        t.predict(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        grow_tree(np.array([[np.nan], [2.0]]), np.array([0, 1]))


def test_tree_json_round_trip():
    X, y = conflict_free(1)
    t = grow_tree(X, y, FULL_GROWTH)
    back = DecisionTree.from_dict(t.to_dict())
    assert (back.predict(X) == t.predict(X)).all()
    assert back.config == t.config


# -- pruning ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_pruning_path_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 31))
    X, y = conflict_free(seed, n=n, p=3)
    tree = grow_tree(X, y, FULL_GROWTH)
    path = check_path_against_enumeration(tree)
    alphas = path.alphas
    assert alphas[0] == 0 and (np.diff(alphas) > 0).all()
    leaves = [s.n_leaves for s in path.steps]
    assert all(a > b for a, b in zip(leaves, leaves[1:]))
    assert path[-1].n_leaves == 1
    errors = [s.error for s in path.steps]
    assert all(a <= b for a, b in zip(errors, errors[1:]))
    for a, b in zip(path.steps, path.steps[1:]):
        assert set(b.tree.node_ids) <= set(a.tree.node_ids)
    assert tree.resubstitution_error <= min(errors)


def test_root_only_path():
    t = grow_tree(np.array([[1.0], [1.0], [1.0]]), np.array([0, 1, 1]), FULL_GROWTH)
    path = pruning_path(t)
    assert len(path) == 1 and path.alphas[0] == 0
    huge = path.subtree_for(10.0)
    assert huge.n_leaves == 1 and predict_tree(huge, [1.0]) == 1


def test_alpha_beyond_last_breakpoint_gives_root():
    X, y = conflict_free(4, n=40)
    path = pruning_path(grow_tree(X, y, FULL_GROWTH))
    root = path.subtree_for(path.alphas[-1] * 2 + 1)
    assert root.n_leaves == 1
    assert predict_tree(root, X[0]) == int(y.sum() * 2 > len(y))


def test_separable_data_keeps_optimal_tree():
    rng = np.random.default_rng(0)
    X = rng.integers(1, 6, size=(200, 3)).astype(float)
    y = (X[:, 0] <= 2).astype(int)
    tree = grow_tree(X, y)
    path = pruning_path(tree)
    for variant in (1, 2):
        t = prune(path, X, y, variant, rng=1)
        assert t.resubstitution_error == 0 and t.n_leaves == 2


def test_variant2_alpha_not_below_variant1():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.integers(1, 6, size=(150, 4)).astype(float)
        y = (X[:, 0] + rng.normal(0, 1.5, 150) > 3).astype(int)
        path = pruning_path(grow_tree(X, y))
        r1 = prune_with_details(path, X, y, 1, rng=seed)
        r2 = prune_with_details(path, X, y, 2, rng=seed)
        assert r2.tree.alpha >= r1.tree.alpha
        assert r1.cv.cv_error[r1.cv.chosen] == r1.cv.cv_error.min()


def noise_root_rates(runs=100):
    from studentrisk.synth import generate_cohort, null_spec
    roots = {1: 0, 2: 0}
    for seed in range(runs):
        ds, _ = generate_cohort(null_spec(n=783, n_vars=20, seed=seed))
        X, y = ds.matrix(), ds.y.astype(int)
        path = pruning_path(grow_tree(X, y))
        for variant in roots:
            roots[variant] += prune(path, X, y, variant, rng=seed).n_leaves == 1
    return roots


# Measured rate is about 64/100 for variant 2 (35/100 for variant 1); the
# 1-SE margin is too narrow to absorb the optimism of a minimum taken over
# the whole alpha grid.
@pytest.mark.xfail(strict=True, reason="1-SE rule keeps a non-root subtree in about a third of "
                                       "pure-noise cohorts")
def test_pure_noise_variant2_prunes_to_root():
    roots = noise_root_rates()
    assert roots[2] >= roots[1]
    assert roots[2] >= 90


# -- forests ----------------------------------------------------------------

def test_forest_determinism():
    X, y = conflict_free(2, n=100, p=5)
    a = fit_forest(X, y, 20, 2, rng=7)
    b = fit_forest(X, y, 20, 2, rng=7)
    for ta, tb in zip(a.trees, b.trees):
        for field in ("feature", "threshold", "left", "right", "counts"):
            np.testing.assert_array_equal(getattr(ta, field), getattr(tb, field))
    c = fit_forest(X, y, 20, 2, rng=8)
    assert any(not np.array_equal(s, t) for s, t in zip(a.samples, c.samples))


@pytest.mark.parametrize("seed", range(20))
def test_single_tree_forest_equals_tree(seed):
    X, y = conflict_free(seed, n=50, p=4)
    forest = fit_forest(X, y, 1, X.shape[1], rng=seed, bootstrap=False)
    tree = grow_tree(X, y, FOREST_GROWTH)
    np.testing.assert_array_equal(forest.trees[0].feature, tree.feature)
    np.testing.assert_array_equal(forest.trees[0].threshold, tree.threshold)
    Q = np.random.default_rng(seed).integers(0, 6, size=(40, 4)).astype(float)
    np.testing.assert_array_equal(forest.predict(Q), tree.predict(Q))


def test_forest_separable_resubstitution():
    rng = np.random.default_rng(3)
    X = rng.integers(1, 6, size=(120, 4)).astype(float)
    y = (X[:, 1] >= 3).astype(int)
    f = fit_forest(X, y, 100, 2, rng=0)
    assert (f.predict(X) == y).all()
    v = f.votes(X)
    assert ((v >= 0) & (v <= 100)).all()


def stump(cls):
    return DecisionTree(np.array([-1], np.int32), np.array([np.nan]), np.array([-1], np.int32),
                        np.array([-1], np.int32), np.array([[1 - cls, cls]]), FOREST_GROWTH, 1)


@pytest.mark.parametrize("ones, zeros, expected", [(3, 0, 1), (0, 3, 0), (501, 499, 1),
                                                   (500, 500, 0), (499, 501, 0)])
def test_vote_rule(ones, zeros, expected):
    trees = [stump(1)] * ones + [stump(0)] * zeros
    f = RandomForest(trees, [None] * len(trees), 1, 0)
    assert predict_forest(f, [1.0]) == expected
    assert f.votes(np.array([[1.0]]))[0] == ones


def test_forest_errors_and_defaults():
    X, y = conflict_free(0, n=20, p=3)
    with pytest.raises(ValueError):
        fit_forest(X, y, 5, mtry=4)
    assert fit_forest(X, y, 3, rng=0).mtry == 1
    back = RandomForest.from_dict(fit_forest(X, y, 3, rng=0).to_dict())
    assert (back.predict(X) == fit_forest(X, y, 3, rng=0).predict(X)).all()


def test_optimize_mtry_single_candidate():
    X = np.arange(20, dtype=float).reshape(-1, 1)
    y = (X[:, 0] > 9).astype(int)
    assert optimize_mtry(X, y, 5, rng=0) == 1


def test_mtry_errors_reevaluate_independently():
    rng = np.random.default_rng(5)
    X = rng.integers(1, 6, size=(120, 11)).astype(float)
    y = (X[:, 0] + rng.normal(0, 1, 120) > 3).astype(int)
    for objective in ("resub", "cv"):
        errs = mtry_errors(X, y, 10, rng=3, objective=objective, candidates=[1, 4, 11], folds=5)
        for m in (1, 4, 11):
            alone = mtry_errors(X, y, 10, rng=3, objective=objective, candidates=[m], folds=5)
            assert alone[m] == errs[m]
        best = optimize_mtry(X, y, 10, rng=3, objective=objective, candidates=[1, 4, 11], folds=5)
        assert errs[best] == min(errs.values())
        assert best == min(m for m in errs if errs[m] == errs[best])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 60), st.integers(1, 4))
def test_property_tree_routes_training_rows_to_their_leaf_counts(seed, n, p):
    X, y = conflict_free(seed, n=n, p=p, levels=3)
    t = grow_tree(X, y, GrowthConfig(2, 1))
    leaves = t.apply(X)
    counts = np.zeros((t.n_nodes, 2), int)
    np.add.at(counts, (leaves, y), 1)
    np.testing.assert_array_equal(counts[t.is_leaf], t.counts[t.is_leaf])
