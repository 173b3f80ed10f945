"""Hot loops: tree growth, tree routing and the SMO dual solver.

The compiled Cython module is used when it is importable; otherwise the
NumPy implementations in ``_pykernels`` are used. Set the environment
variable ``STUDENTRISK_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("STUDENTRISK_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

backend = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

# int64 products in the compiled split test stay exact below this weight
MAX_COMPILED_ROWS = 40000


def get(name=None):
    """Return a kernel module by name ('cython' or 'python'), or the default."""
    if name is None:
        return backend
    if name == "python":
        return python
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def grow_tree(codes, n_levels, y, sample, min_split, min_bucket, mtry, seed, allow_zero=False,
              kernels=None):
    k = get(kernels)
    if k is not python and len(sample) > MAX_COMPILED_ROWS:
        k = python
    return k.grow_tree(codes, n_levels, y, sample, min_split, min_bucket, mtry, seed,
                       bool(allow_zero))


def apply_trees(X, feature, threshold, left, right, roots, kernels=None):
    return get(kernels).apply_trees(X, feature, threshold, left, right, roots)


def smo_solve(K, y, C, eps, max_iter, kernels=None):
    return get(kernels).smo_solve(K, y, C, eps, max_iter)
