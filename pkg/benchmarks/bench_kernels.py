"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs on the same inputs under both backends; outputs are
checked for equality before timings are reported.
"""
import argparse
import time

import numpy as np

from studentrisk import _kernels
from studentrisk._kernels import _pykernels


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def tree_case(n, p, levels, seed=0):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, levels, size=(n, p)).astype(np.int32)
    y = (codes[:, 0] + rng.integers(0, levels, n) > levels).astype(np.int64)
    sample = rng.integers(0, n, n).astype(np.int64)
    return codes, np.full(p, levels, dtype=np.int64), y, sample


def forest_case(n, p, trees, seed=1):
    codes, n_levels, y, _ = tree_case(n, p, 5, seed)
    rng = np.random.default_rng(seed)
    parts, roots, off = [], [], 0
    for t in range(trees):
        f, s, l, r, _, _ = _pykernels.grow_tree(codes, n_levels, y, rng.integers(0, n, n),
                                                 2, 1, 3, t)
        parts.append((f, np.where(f >= 0, s, np.nan).astype(float),
                      np.where(l >= 0, l + off, -1), np.where(r >= 0, r + off, -1)))
        roots.append(off)
        off += f.size
    feature, threshold, left, right = (np.concatenate([q[i] for q in parts]) for i in range(4))
    X = rng.integers(0, 5, size=(n, p)).astype(float)
    return (X, feature.astype(np.int32), threshold, left.astype(np.int32),
            right.astype(np.int32), np.array(roots, dtype=np.int64))


def svm_case(n, seed=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    K = np.exp(-0.1 * ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    return K, y


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b, equal_nan=a.dtype.kind == "f")
    return a == b


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")
    c, py = _kernels.compiled, _pykernels
    cases = []
    for n, p in ((200, 10), (800, 20), (3000, 20)):
        codes, n_levels, y, sample = tree_case(n, p, 5)
        for mtry in (p, 3):
            args_ = (codes, n_levels, y, sample, 2, 1, mtry, 7, False)
            cases.append((f"grow_tree n={n} p={p} mtry={mtry}",
                          lambda a=args_: c.grow_tree(*a), lambda a=args_: py.grow_tree(*a)))
    for n, trees in ((200, 100), (800, 300)):
        fc = forest_case(n, 10, trees)
        cases.append((f"apply_trees n={n} trees={trees}",
                      lambda a=fc: c.apply_trees(*a), lambda a=fc: py.apply_trees(*a)))
    for n in (200, 600):
        K, y = svm_case(n)
        cases.append((f"smo_solve n={n}", lambda K=K, y=y: c.smo_solve(K, y, 1.0, 1e-3, 10**6),
                      lambda K=K, y=y: py.smo_solve(K, y, 1.0, 1e-3, 10**6)))

    print(f"{'kernel':36s} {'cython (s)':>11s} {'python (s)':>11s} {'speed-up':>9s}  equal")
    for name, fast, slow in cases:
        tc, oc = best_of(fast, args.repeat)
        tp, op = best_of(slow, args.repeat)
        print(f"{name:36s} {tc:11.5f} {tp:11.5f} {tp / tc:8.1f}x  {same(oc, op)}")


if __name__ == "__main__":
    main()
