import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from studentrisk import _kernels
from studentrisk._kernels import _pykernels

needs_compiled = pytest.mark.skipif(_kernels.compiled is None,
                                    reason="compiled kernels not built")


def coded(seed, n, p, levels):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, levels, size=(n, p)).astype(np.int32)
    y = rng.integers(0, 2, n).astype(np.int64)
    return codes, np.full(p, levels, dtype=np.int64), y, rng


def same(a, b):
    assert len(a) == len(b)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 120), st.integers(1, 6), st.integers(1, 6),
       st.integers(1, 20), st.integers(1, 8), st.booleans(), st.booleans())
def test_grow_tree_backends_agree(seed, n, p, levels, min_split, min_bucket, boot, allow_zero):
    codes, n_levels, y, rng = coded(seed, n, p, levels)
    sample = rng.integers(0, n, n) if boot else np.arange(n)
    sample = sample.astype(np.int64)
    mtry = int(rng.integers(1, p + 1))
    args = (codes, n_levels, y, sample, min_split, min_bucket, mtry, seed, allow_zero)
    same(_kernels.compiled.grow_tree(*args), _pykernels.grow_tree(*args))


def test_splitmix_reference_values():
    # first outputs for seed 0 of the published SplitMix64 generator
    g = _pykernels.SplitMix64(0)
    assert [g.next() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                                           0x06C45D188009454F]


def test_sampled_features_are_distinct_and_sorted():
    g = _pykernels.SplitMix64(42)
    for _ in range(200):
        f = _pykernels.sample_features(g, 9, 4)
        assert f == sorted(set(f)) and len(f) == 4 and all(0 <= v < 9 for v in f)


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_apply_trees_backends_agree(seed, n_trees):
    rng = np.random.default_rng(seed)
    n, p = 40, 3
    codes, n_levels, y, _ = coded(seed, n, p, 4)
    parts, roots, off = [], [], 0
    for t in range(n_trees):
        f, s, l, r, _, _ = _pykernels.grow_tree(codes, n_levels, y, rng.integers(0, n, n),
                                                 1, 1, 2, seed + t)
        thr = np.where(f >= 0, s.astype(float), np.nan)
        parts.append((f, thr, np.where(l >= 0, l + off, -1), np.where(r >= 0, r + off, -1)))
        roots.append(off)
        off += f.size
    feature, threshold, left, right = (np.concatenate([q[i] for q in parts]) for i in range(4))
    feature, left, right = (a.astype(np.int32) for a in (feature, left, right))
    X = rng.integers(0, 4, size=(60, p)).astype(float)
    roots = np.array(roots, dtype=np.int64)
    a = _kernels.compiled.apply_trees(X, feature, threshold, left, right, roots)
    b = _pykernels.apply_trees(X, feature, threshold, left, right, roots)
    np.testing.assert_array_equal(a, b)


@needs_compiled
def test_apply_trees_missing_value_raises_in_both():
    feature = np.array([0, -1, -1], np.int32)
    threshold = np.array([1.0, np.nan, np.nan])
    left = np.array([1, -1, -1], np.int32)
    right = np.array([2, -1, -1], np.int32)
    X = np.array([[np.nan]])
    for k in (_kernels.compiled, _pykernels):
        with pytest.raises(ValueError):
            k.apply_trees(X, feature, threshold, left, right, np.array([0]))


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 40), st.floats(0.1, 10.0))
def test_smo_backends_agree(seed, n, C):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[0], y[1] = -1.0, 1.0
    K = np.exp(-0.5 * ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    a = _kernels.compiled.smo_solve(K, y, C, 1e-3, 10**5)
    b = _pykernels.smo_solve(K, y, C, 1e-3, 10**5)
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
    assert a[2:] == b[2:]
    alpha = a[0]
    assert abs(alpha @ y) < 1e-6
    assert ((alpha >= 0) & (alpha <= C)).all()


def test_environment_forces_python_backend():
    code = ("from studentrisk import _kernels; "
            "print(_kernels.BACKEND, _kernels.get() is _kernels.python)")
    env = {"STUDENTRISK_KERNELS": "python", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert out.stdout.split() == ["python", "True"]
    with pytest.raises(ValueError):
        _kernels.get("fortran")
