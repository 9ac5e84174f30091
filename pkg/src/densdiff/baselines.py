"""Comparison methods: LSDD, KDE plug-in labeling, k-means and spectral clustering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .basis import DEFAULT_MAX_CENTERS, GaussianBasis, analytic_gram, build_basis, eval_basis
from .data import DataError, Dataset, as_array, check_same_dim, kfold_indices, make_rng
from .dsdd import sign_labels


# -- least-squares density difference -------------------------------------


@dataclass(frozen=True)
class LsddModel:
    """``g(x) = theta . psi(x)``, a least-squares fit of ``p(x) - p'(x)``."""

    basis: GaussianBasis
    theta: NDArray[np.float64]
    lam: float

    def decision_function(self, X: ArrayLike | Dataset) -> NDArray[np.float64]:
        return eval_basis(self.basis, X) @ self.theta

    def to_json(self) -> str:
        return json.dumps({"kind": "lsdd", "sigma": self.basis.sigma,
                           "centers": self.basis.centers.tolist(),
                           "theta": self.theta.tolist(), "lambda": self.lam}, indent=1)


def _lsdd_solve(H, h, lam):
    A = H + lam * np.eye(H.shape[0])
    try:
        factor = cho_factor(A)
    except LinAlgError:
        raise np.linalg.LinAlgError(
            "LSDD system is singular; use a strictly positive regularization lambda") from None
    theta = cho_solve(factor, h)
    # one step of iterative refinement keeps the residual at rounding level
    theta += cho_solve(factor, h - A @ theta)
    return theta, A


def lsdd_fit(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, sigma: float, lam: float,
             max_centers: int = DEFAULT_MAX_CENTERS, seed: int = 0) -> LsddModel:
    """Closed-form ridge solution ``theta = (H + lam I)^-1 h``.

    ``H`` is the analytic Gram matrix of the basis and
    ``h = mean psi(X_p) - mean psi(X_p')``.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    if lam < 0:
        raise ValueError("regularization must be non-negative")
    basis = build_basis(Xp, Xq, sigma, max_centers, seed)
    h = eval_basis(basis, Xp).mean(axis=0) - eval_basis(basis, Xq).mean(axis=0)
    theta, A = _lsdd_solve(analytic_gram(basis), h, lam)
    scale = np.linalg.norm(h)
    if np.linalg.norm(A @ theta - h) > 1e-10 * (scale if scale > 0 else 1.0):
        raise np.linalg.LinAlgError("LSDD solve is inaccurate; increase lambda")
    return LsddModel(basis, theta, float(lam))


def lsdd_label(model: LsddModel, X: ArrayLike | Dataset) -> NDArray[np.int64]:
    return sign_labels(model.decision_function(X))


def lsdd_objective(theta, H, h, lam) -> float:
    """``1/2 theta' H theta - h' theta + lam/2 theta' theta``."""
    return float(0.5 * theta @ H @ theta - h @ theta + 0.5 * lam * theta @ theta)


def lsdd_cross_validate(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, sigma_grid: Sequence[float],
                        lambda_grid: Sequence[float], folds: int = 5, seed: int = 0,
                        max_centers: int = DEFAULT_MAX_CENTERS) -> tuple[float, float, NDArray]:
    """Pick ``(sigma, lambda)`` by the held-out squared-loss criterion.

    The score of a fold is ``1/2 theta' H theta - h_val' theta`` with ``h_val``
    built from the validation parts of both datasets. Ties go to the larger
    ``sigma``, then the larger ``lambda``.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    _check_grids(sigma_grid, lambda_grid)
    fp = kfold_indices(Xp.shape[0], folds, seed)
    fq = kfold_indices(Xq.shape[0], folds, seed + 1)
    scores = np.zeros((len(sigma_grid), len(lambda_grid)))
    for (tp, vp), (tq, vq) in zip(fp, fq):
        for i, sigma in enumerate(sigma_grid):
            basis = build_basis(Xp[tp], Xq[tq], sigma, max_centers, seed)
            H = analytic_gram(basis)
            Pp, Pq = eval_basis(basis, Xp), eval_basis(basis, Xq)
            h_tr = Pp[tp].mean(axis=0) - Pq[tq].mean(axis=0)
            h_val = Pp[vp].mean(axis=0) - Pq[vq].mean(axis=0)
            for j, lam in enumerate(lambda_grid):
                theta, _ = _lsdd_solve(H, h_tr, lam)
                scores[i, j] += (0.5 * theta @ H @ theta - h_val @ theta) / folds
    i, j = select_cell(scores, sigma_grid, lambda_grid)
    return float(sigma_grid[i]), float(lambda_grid[j]), scores


def select_cell(scores: NDArray, sigma_grid: Sequence[float], lambda_grid: Sequence[float],
                rtol: float = 1e-12) -> tuple[int, int]:
    """Index of the smallest score; ties prefer larger sigma, then larger lambda."""
    best = np.min(scores)
    tied = np.argwhere(scores <= best + rtol * max(1.0, abs(best)))
    key = [(sigma_grid[i], lambda_grid[j]) for i, j in tied]
    i, j = tied[max(range(len(key)), key=lambda k: key[k])]
    return int(i), int(j)


def _check_grids(sigma_grid, lambda_grid):
    if len(sigma_grid) == 0 or len(lambda_grid) == 0:
        raise ValueError("hyperparameter grids must be non-empty")


# -- kernel density estimation ---------------------------------------------


@dataclass(frozen=True)
class KdeModel:
    samples: NDArray[np.float64]
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "samples", as_array(self.samples))


def kde_fit(X: ArrayLike | Dataset, sigma: float) -> KdeModel:
    return KdeModel(as_array(X), float(sigma))


def _gauss(sq, var, d):
    return np.exp(-sq / (2.0 * var)) / (2.0 * np.pi * var) ** (d / 2.0)


def kde_density(model: KdeModel, X: ArrayLike | Dataset) -> NDArray[np.float64]:
    """Normalized Gaussian KDE ``(1/n) sum_i N(x; x_i, sigma^2 I)``."""
    X = np.atleast_2d(np.asarray(X.samples if isinstance(X, Dataset) else X, dtype=np.float64))
    d = model.samples.shape[1]
    if X.shape[1] != d:
        raise DataError(f"dimension mismatch: query has d={X.shape[1]}, model has d={d}")
    return _gauss(cdist(X, model.samples, "sqeuclidean"), model.sigma ** 2, d).mean(axis=1)


def lscv_score(X: ArrayLike | Dataset, sigma: float) -> float:
    """``integral p_hat^2 - (2/n) sum_i p_hat_{-i}(x_i)``."""
    X = as_array(X)
    n, d = X.shape
    if n < 2:
        raise DataError("least-squares cross-validation needs at least two samples")
    sq = cdist(X, X, "sqeuclidean")
    s2 = sigma ** 2
    integral = _gauss(sq, 2.0 * s2, d).sum() / n ** 2
    K = _gauss(sq, s2, d)
    loo = (K.sum() - np.trace(K)) / (n * (n - 1))
    return float(integral - 2.0 * loo)


def kde_lscv(X: ArrayLike | Dataset, sigma_grid: Sequence[float]) -> float:
    """Bandwidth from ``sigma_grid`` minimizing :func:`lscv_score` (first on ties)."""
    if len(sigma_grid) == 0:
        raise ValueError("bandwidth grid must be non-empty")
    scores = [lscv_score(X, s) for s in sigma_grid]
    return float(sigma_grid[int(np.argmin(scores))])


def kde_label(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, sigma_grid: Sequence[float]):
    """Label both datasets by ``sign(p_hat - p_hat')`` with separately tuned bandwidths.

    Returns ``(labels_p, labels_q, sigma_p, sigma_q)``.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    mp = kde_fit(Xp, kde_lscv(Xp, sigma_grid))
    mq = kde_fit(Xq, kde_lscv(Xq, sigma_grid))

    def label(X):
        return sign_labels(kde_density(mp, X) - kde_density(mq, X))

    return label(Xp), label(Xq), mp.sigma, mq.sigma


# -- clustering --------------------------------------------------------------


@dataclass(frozen=True)
class KmeansResult:
    labels: NDArray[np.int64]
    centers: NDArray[np.float64]
    wcss: float
    wcss_trace: tuple[float, ...]


def _plusplus(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rest[rng.integers(rest.size)])
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _lloyd(X, centers, max_iter):
    trace = []
    labels = None
    for _ in range(max_iter):
        dist = cdist(X, centers, "sqeuclidean")
        new = np.argmin(dist, axis=1)
        trace.append(float(dist[np.arange(X.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
    return labels, centers, trace


def kmeans(X: ArrayLike | Dataset, k: int = 2, restarts: int = 10, max_iter: int = 300,
           seed: int = 0) -> KmeansResult:
    """Lloyd's algorithm from k-means++ seeds; the best restart by WCSS wins.

    Cluster indices are ``0..k-1``. Ties between restarts keep the earliest.
    """
    X = as_array(X)
    if not 1 <= k <= X.shape[0]:
        raise DataError(f"k must lie in [1, n] (k={k}, n={X.shape[0]})")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    rng = make_rng(seed)
    best = None
    for _ in range(restarts):
        labels, centers, trace = _lloyd(X, _plusplus(X, k, rng), max_iter)
        if best is None or trace[-1] < best.wcss:
            best = KmeansResult(labels.astype(np.int64), centers, trace[-1], tuple(trace))
    return best


def knn_affinity(X: ArrayLike | Dataset, knn: int) -> NDArray[np.float64]:
    """Symmetric 0/1 adjacency: edge if either point is among the other's ``knn`` nearest."""
    X = as_array(X)
    n = X.shape[0]
    if not 1 <= knn < n:
        raise DataError(f"knn must lie in [1, n-1] (knn={knn}, n={n})")
    dist = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :knn]
    A = np.zeros((n, n))
    A[np.repeat(np.arange(n), knn), nearest.ravel()] = 1.0
    return np.maximum(A, A.T)


def spectral_cluster(X: ArrayLike | Dataset, knn: int = 7, seed: int = 0) -> NDArray[np.int64]:
    """Two-way normalized-cut split of the k-NN graph; labels are +1 / -1.

    Uses the second generalized eigenvector of ``(D - A) v = mu D v`` and
    splits it with 2-means.
    """
    A = knn_affinity(X, knn)
    ncomp, _ = connected_components(A, directed=False)
    if ncomp > 2:
        raise DataError(f"k-NN graph has {ncomp} connected components; increase knn")
    deg = A.sum(axis=1)
    _, vecs = eigh(np.diag(deg) - A, np.diag(deg), subset_by_index=[0, 1])
    fiedler = vecs[:, 1:2]
    labels = kmeans(fiedler, 2, seed=seed).labels
    return np.where(labels == 0, 1, -1).astype(np.int64)


def kmeans_label(X: ArrayLike | Dataset, seed: int = 0) -> NDArray[np.int64]:
    """Two-means clustering mapped to +1 / -1."""
    return np.where(kmeans(X, 2, seed=seed).labels == 0, 1, -1).astype(np.int64)
