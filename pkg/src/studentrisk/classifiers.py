"""Discriminant analysis, logistic regression, RBF SVMs and k-NN.

Every model here works on standardized features. :class:`ClassifierModel`
wraps any of the nine method configurations (trees and forests included)
behind one predict contract and owns the standardization step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .dataset import NormalizationParams, fit_normalization
from .folds import as_seed, derive_seed, stratified_folds
from .trees import (DecisionTree, GrowthConfig, RandomForest, fit_forest, grow_tree,
                    optimize_mtry, prune_with_details, pruning_path)

RIDGE_EPS = 1e-6
EIG_FLOOR = 1e-10


class ModelError(RuntimeError):
    """A fit could not be completed."""


def _check_binary(y):
    y = np.asarray(y).astype(np.int64)
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0/1")
    if not (y == 0).any() or not (y == 1).any():
        raise ModelError("both classes must be present in the training data")
    return y


def _ridged(cov: np.ndarray):
    """Add eps*trace/p to the diagonal when ``cov`` is near singular."""
    p = cov.shape[0]
    if np.linalg.eigvalsh(cov).min() >= EIG_FLOOR:
        return cov, False
    trace = float(np.trace(cov))
    bump = RIDGE_EPS * trace / p if trace > 0 else RIDGE_EPS
    return cov + bump * np.eye(p), True


# -- discriminant analysis ---------------------------------------------------

@dataclass(eq=False)
class LdaModel:
    means: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    log_priors: np.ndarray
    ridge: bool = False

    def decision(self, Z) -> np.ndarray:
        """delta_1(x) - delta_0(x); positive favours class 1."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        w = self.cov_inv @ (self.means[1] - self.means[0])
        c = (-0.5 * (self.means[1] @ self.cov_inv @ self.means[1])
             + 0.5 * (self.means[0] @ self.cov_inv @ self.means[0])
             + self.log_priors[1] - self.log_priors[0])
        return Z @ w + c

    def predict(self, Z) -> np.ndarray:
        return (self.decision(Z) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "cov": self.cov.tolist(),
                "log_priors": self.log_priors.tolist(), "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d):
        cov = np.asarray(d["cov"], dtype=float)
        return cls(np.asarray(d["means"]), cov, np.linalg.inv(cov),
                   np.asarray(d["log_priors"]), bool(d["ridge"]))


def fit_lda(X, y) -> LdaModel:
    """Gaussian classes with a shared covariance (pooled, divisor n-2)."""
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n = y.size
    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    resid = X - means[y]
    cov = resid.T @ resid / max(n - 2, 1)
    cov, ridge = _ridged(cov)
    priors = np.array([(y == 0).mean(), (y == 1).mean()])
    return LdaModel(means, cov, np.linalg.inv(cov), np.log(priors), ridge)


@dataclass(eq=False)
class QdaModel:
    means: np.ndarray
    covs: np.ndarray
    cov_invs: np.ndarray
    log_dets: np.ndarray
    log_priors: np.ndarray
    ridge: tuple = (False, False)

    def scores(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty((Z.shape[0], 2))
        for c in (0, 1):
            d = Z - self.means[c]
            maha = np.einsum("ij,jk,ik->i", d, self.cov_invs[c], d)
            out[:, c] = -0.5 * self.log_dets[c] - 0.5 * maha + self.log_priors[c]
        return out

    def decision(self, Z) -> np.ndarray:
        s = self.scores(Z)
        return s[:, 1] - s[:, 0]

    def predict(self, Z) -> np.ndarray:
        return (self.decision(Z) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "covs": self.covs.tolist(),
                "log_priors": self.log_priors.tolist(), "ridge": list(self.ridge)}

    @classmethod
    def from_dict(cls, d):
        covs = np.asarray(d["covs"], dtype=float)
        return cls(np.asarray(d["means"]), covs, np.linalg.inv(covs),
                   np.array([np.linalg.slogdet(c)[1] for c in covs]),
                   np.asarray(d["log_priors"]), tuple(d["ridge"]))


def fit_qda(X, y) -> QdaModel:
    """Gaussian classes with their own covariances (divisor n_k - 1)."""
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    means, covs, ridges = [], [], []
    for c in (0, 1):
        Xc = X[y == c]
        mu = Xc.mean(axis=0)
        d = Xc - mu
        cov, ridge = _ridged(d.T @ d / max(Xc.shape[0] - 1, 1))
        means.append(mu)
        covs.append(cov)
        ridges.append(ridge)
    covs = np.stack(covs)
    priors = np.array([(y == 0).mean(), (y == 1).mean()])
    return QdaModel(np.stack(means), covs, np.linalg.inv(covs),
                    np.array([np.linalg.slogdet(c)[1] for c in covs]), np.log(priors),
                    tuple(ridges))


# -- logistic regression -----------------------------------------------------

def sigmoid(eta):
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def binomial_deviance(y, eta) -> float:
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))


@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    converged: bool
    iterations: int
    deviance_history: list = field(default_factory=list)

    def linear(self, Z) -> np.ndarray:
        # row-wise sums so a row scores the same alone or in a batch
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return (Z * self.weights).sum(axis=1) + self.intercept

    def predict_proba(self, Z) -> np.ndarray:
        return sigmoid(self.linear(Z))

    def predict(self, Z) -> np.ndarray:
        # probability exactly 0.5 is class 0
        return (self.predict_proba(Z) > 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "intercept": self.intercept,
                "converged": self.converged, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], dtype=float), float(d["intercept"]),
                   bool(d["converged"]), int(d["iterations"]))


def fit_logistic(X, y, max_iter: int = 25, tol: float = 1e-8) -> LogisticModel:
    """Maximum-likelihood logistic regression by IRLS with step halving.

    Convergence means the deviance changed by less than ``tol``. When the
    training classes are perfectly separated no maximum exists: iteration
    continues to ``max_iter`` and the model is flagged ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    y = _check_binary(y).astype(float)
    n, p = X.shape
    D = np.hstack([np.ones((n, 1)), X])
    beta = np.zeros(p + 1)
    eta = D @ beta
    dev = binomial_deviance(y, eta)
    history = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = sigmoid(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-300)
        sw = np.sqrt(w)
        step = np.linalg.lstsq(D * sw[:, None], (y - mu) / sw, rcond=None)[0]
        new = beta + step
        new_dev = binomial_deviance(y, D @ new)
        halvings = 0
        while not new_dev <= dev and halvings < 40:
            step = step / 2.0
            new = beta + step
            new_dev = binomial_deviance(y, D @ new)
            halvings += 1
        if not new_dev <= dev:
            history.append(dev)
            break
        change = dev - new_dev
        beta, dev = new, new_dev
        eta = D @ beta
        history.append(dev)
        separated = bool(np.all(np.where(y == 1, eta > 0, eta < 0)))
        if change < tol and not separated:
            converged = True
            break
    return LogisticModel(beta[1:].copy(), float(beta[0]), converged, it, history)


def predict_logistic(model: LogisticModel, row):
    """``(probability, class)`` for one row."""
    prob = float(model.predict_proba(np.asarray(row, dtype=float).reshape(1, -1))[0])
    return prob, int(prob > 0.5)


# -- support vector machines -------------------------------------------------

SVM_TOL = 1e-3
SVM_MAX_ITER = 10**6
MEDIAN_PAIRS = 1000


class SvmConvergenceError(ModelError):
    pass


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def median_heuristic_gamma(X, rng=None) -> float:
    """1 / (2 median^2) over pairwise distances (at most 1000 sampled pairs)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n * (n - 1) // 2 <= MEDIAN_PAIRS:
        i, j = np.triu_indices(n, 1)
    else:
        gen = np.random.default_rng(as_seed(rng))
        i = gen.integers(0, n, size=MEDIAN_PAIRS)
        j = (i + gen.integers(1, n, size=MEDIAN_PAIRS)) % n
    d = np.sqrt(((X[i] - X[j]) ** 2).sum(axis=1))
    d = d[d > 0]
    if d.size == 0:
        return 1.0 / max(X.shape[1], 1)
    med = float(np.median(d))
    return 1.0 / (2.0 * med * med)


@dataclass(eq=False)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float
    variant: int
    alpha: np.ndarray | None = None
    iterations: int = 0

    def decision(self, Z) -> np.ndarray:
        return rbf_kernel(Z, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def predict(self, Z) -> np.ndarray:
        return (self.decision(Z) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {"support_vectors": self.support_vectors.tolist(),
                "dual_coef": self.dual_coef.tolist(), "bias": self.bias,
                "gamma": self.gamma, "C": self.C, "variant": self.variant}

    @classmethod
    def from_dict(cls, d):
        p = len(d["support_vectors"][0]) if d["support_vectors"] else 0
        return cls(np.asarray(d["support_vectors"], dtype=float).reshape(-1, p),
                   np.asarray(d["dual_coef"], dtype=float), float(d["bias"]),
                   float(d["gamma"]), float(d["C"]), int(d["variant"]))


def _rho(alpha, G, y, C) -> float:
    yG = y * G
    upper = alpha >= C
    lower = alpha <= 0
    free = ~upper & ~lower
    if free.any():
        return float(yG[free].sum() / free.sum())
    ub_mask = (upper & (y < 0)) | (lower & (y > 0))
    lb_mask = (upper & (y > 0)) | (lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def fit_svm(X, y, variant: int = 1, C: float = 1.0, rng=None, *, kernels=None,
            max_iter: int = SVM_MAX_ITER) -> SvmModel:
    """C-SVC with a Gaussian kernel, dual solved by SMO to KKT gap 1e-3.

    Variant 1 sets the bandwidth by the median heuristic, variant 2 uses
    gamma = 1/p.
    """
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    ys = np.where(y == 1, 1.0, -1.0)
    gamma = median_heuristic_gamma(X, rng) if variant == 1 else 1.0 / X.shape[1]
    K = np.ascontiguousarray(rbf_kernel(X, X, gamma))
    alpha, G, it, ok = _kernels.smo_solve(K, ys, float(C), SVM_TOL, int(max_iter),
                                          kernels=kernels)
    if not ok:
        up = np.where(ys > 0, alpha < C, alpha > 0)
        low = np.where(ys > 0, alpha > 0, alpha < C)
        gap = np.max(-ys[up] * G[up]) + np.max(ys[low] * G[low])
        raise SvmConvergenceError(f"SMO stopped after {it} iterations with KKT gap {gap:.3g} "
                                  f"(tolerance {SVM_TOL}); n={y.size}, gamma={gamma:.4g}, C={C}")
    rho = _rho(alpha, G, ys, C)
    sv = alpha > 0
    return SvmModel(X[sv].copy(), alpha[sv] * ys[sv], -rho, gamma, float(C), variant, alpha, it)


# -- k nearest neighbours ----------------------------------------------------

def _neighbor_order(train: np.ndarray, query: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Training rows sorted by distance for each query row (ties: lower index)."""
    out = np.empty((query.shape[0], train.shape[0]), dtype=np.int64)
    for s in range(0, query.shape[0], chunk):
        q = query[s:s + chunk]
        d = ((q[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
        out[s:s + chunk] = np.argsort(d, axis=1, kind="stable")
    return out


@dataclass(eq=False)
class KnnModel:
    train: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.labels.size:
            raise ValueError(f"k must be in [1, {self.labels.size}], got {self.k}")

    def predict(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        order = _neighbor_order(self.train, Z)[:, : self.k]
        ones = self.labels[order].sum(axis=1)
        return (2 * ones > self.k).astype(np.int64)

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "labels": self.labels.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["train"], dtype=float), np.asarray(d["labels"], np.int64),
                   int(d["k"]))


def fit_knn(Z, y, k: int) -> KnnModel:
    return KnnModel(np.asarray(Z, dtype=float).copy(), np.asarray(y).astype(np.int64), int(k))


def knn_predict(model: KnnModel, row) -> int:
    return int(model.predict(np.asarray(row, dtype=float).reshape(1, -1))[0])


DEFAULT_K = tuple(range(1, 32, 2))


def k_errors(Z, y, k_candidates=DEFAULT_K, folds: int = 10, rng=None) -> dict:
    """Stratified CV error of k-NN for each usable candidate k."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y).astype(np.int64)
    fa = stratified_folds(y, min(folds, y.size), rng)
    smallest = min(train.size for train, _ in fa.splits())
    cands = [int(k) for k in k_candidates if 1 <= k <= smallest]
    if not cands:
        cands = [1]
    wrong = dict.fromkeys(cands, 0)
    for train, test in fa.splits():
        order = _neighbor_order(Z[train], Z[test])
        labels = y[train][order]
        csum = np.cumsum(labels, axis=1)
        for k in cands:
            pred = (2 * csum[:, k - 1] > k).astype(np.int64)
            wrong[k] += int((pred != y[test]).sum())
    return {k: w / y.size for k, w in wrong.items()}


def optimize_k(Z, y, k_candidates=DEFAULT_K, folds: int = 10, rng=None) -> int:
    """Candidate k with the lowest stratified CV error; ties favour smaller k."""
    errs = k_errors(Z, y, k_candidates, folds, rng)
    return min(errs, key=lambda k: (errs[k], k))


# -- uniform wrapper ---------------------------------------------------------

METHODS = ("tree1", "tree2", "lda", "qda", "forest", "logistic", "svm1", "svm2", "knn")
METHOD_LABELS = {
    "tree1": "Decision Tree 1",
    "tree2": "Decision Tree 2",
    "lda": "Linear Discriminant Analysis",
    "qda": "Quadratic Discriminant Analysis",
    "forest": "Random Forests",
    "logistic": "Logistic Regression",
    "svm1": "Support Vector Machine 1",
    "svm2": "Support Vector Machine 2",
    "knn": "k-Nearest Neighbors",
}
# k-NN only has a cross-validated row
RESUB_METHODS = tuple(m for m in METHODS if m != "knn")
METHOD_ALIASES = {"rf": "forest", "randomforest": "forest", "lr": "logistic",
                  "tree": "tree1", "svm": "svm1", "majority": "majority"}


def resolve_method(name: str) -> str:
    key = name.strip().lower().replace("-", "").replace("_", "")
    key = METHOD_ALIASES.get(key, key)
    if key not in METHODS and key != "majority":
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return key


@dataclass(frozen=True)
class MethodConfig:
    growth: GrowthConfig = GrowthConfig()
    inner_folds: int = 10
    n_trees: int = 1000
    tune_trees: int = 100
    mtry_candidates: tuple | None = None
    k_candidates: tuple = DEFAULT_K
    svm_C: float = 1.0


@dataclass(eq=False)
class MajorityModel:
    label: int

    def predict(self, Z) -> np.ndarray:
        return np.full(np.atleast_2d(Z).shape[0], self.label, dtype=np.int64)

    def to_dict(self):
        return {"label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["label"]))


def fit_majority(y) -> MajorityModel:
    y = np.asarray(y).astype(np.int64)
    # ties go to class 0
    return MajorityModel(int((y == 1).sum() > (y == 0).sum()))


_MODEL_TYPES = {"tree1": DecisionTree, "tree2": DecisionTree, "lda": LdaModel,
                "qda": QdaModel, "forest": RandomForest, "logistic": LogisticModel,
                "svm1": SvmModel, "svm2": SvmModel, "knn": KnnModel,
                "majority": MajorityModel}
_STANDARDIZED = {"lda", "qda", "logistic", "svm1", "svm2", "knn"}


@dataclass(eq=False)
class ClassifierModel:
    """A fitted method: exactly one tag and its model."""

    tag: str
    model: object
    scaler: NormalizationParams | None = None
    hyperparameters: dict = field(default_factory=dict)
    features: tuple = ()

    def __post_init__(self):
        if self.tag not in _MODEL_TYPES:
            raise ValueError(f"unknown method tag {self.tag!r}")
        if not isinstance(self.model, _MODEL_TYPES[self.tag]):
            raise TypeError(f"{self.tag} expects {_MODEL_TYPES[self.tag].__name__}")

    def _prep(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.scaler.transform(X) if self.scaler is not None else X

    def predict(self, X) -> np.ndarray:
        return self.model.predict(self._prep(X))

    @property
    def has_proba(self) -> bool:
        return self.tag in ("logistic", "forest")

    def predict_proba(self, X):
        """Class-1 probability for logistic (fitted) and forest (vote share)."""
        if not self.has_proba:
            return None
        return self.model.predict_proba(self._prep(X))

    def to_dict(self) -> dict:
        return {"tag": self.tag, "features": list(self.features),
                "hyperparameters": self.hyperparameters,
                "scaler": None if self.scaler is None else self.scaler.to_dict(),
                "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "ClassifierModel":
        tag = d["tag"]
        scaler = None if d.get("scaler") is None else NormalizationParams.from_dict(d["scaler"])
        model = _MODEL_TYPES[tag].from_dict(d["model"])
        return cls(tag, model, scaler, dict(d.get("hyperparameters", {})),
                   tuple(d.get("features", ())))


def fit_method(tag: str, X, y, config: MethodConfig = MethodConfig(), rng=None, *,
               objective: str = "cv", features=(), kernels=None) -> ClassifierModel:
    """Fit one of the nine configurations (or the majority baseline).

    ``objective`` says which error the forest's mtry enumeration targets:
    'resub' when the model is scored on its own training rows, 'cv'
    otherwise. Internal tuning (pruning CV, mtry, k) only sees ``X``/``y``.
    """
    tag = resolve_method(tag)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    seed = as_seed(rng)
    features = tuple(features)
    if tag == "majority":
        return ClassifierModel(tag, fit_majority(y), features=features)
    _check_binary(y)
    if tag in ("tree1", "tree2"):
        variant = 1 if tag == "tree1" else 2
        tree = grow_tree(X, y, config.growth, kernels=kernels)
        res = prune_with_details(pruning_path(tree), X, y, variant, config.inner_folds,
                                 derive_seed(seed, 11), kernels)
        return ClassifierModel(tag, res.tree, None,
                               {"alpha": res.tree.alpha, "leaves": res.tree.n_leaves},
                               features)
    if tag == "forest":
        mtry = optimize_mtry(X, y, config.tune_trees, derive_seed(seed, 12), objective,
                             config.mtry_candidates, config.inner_folds, kernels)
        forest = fit_forest(X, y, config.n_trees, mtry, derive_seed(seed, 13), kernels=kernels)
        return ClassifierModel(tag, forest, None,
                               {"mtry": mtry, "n_trees": config.n_trees,
                                "mtry_objective": objective}, features)
    scaler = fit_normalization(X)
    Z = scaler.transform(X)
    if tag == "lda":
        model = fit_lda(Z, y)
        hp = {"ridge": model.ridge}
    elif tag == "qda":
        model = fit_qda(Z, y)
        hp = {"ridge": list(model.ridge)}
    elif tag == "logistic":
        model = fit_logistic(Z, y)
        hp = {"converged": model.converged, "iterations": model.iterations}
    elif tag in ("svm1", "svm2"):
        model = fit_svm(Z, y, 1 if tag == "svm1" else 2, config.svm_C,
                        derive_seed(seed, 14), kernels=kernels)
        hp = {"gamma": model.gamma, "C": model.C, "n_support": int(model.dual_coef.size)}
    else:
        k = optimize_k(Z, y, config.k_candidates, config.inner_folds, derive_seed(seed, 15))
        model = fit_knn(Z, y, k)
        hp = {"k": k}
    return ClassifierModel(tag, model, scaler, hp, features)


def config_with(config: MethodConfig, **changes) -> MethodConfig:
    return replace(config, **changes)
