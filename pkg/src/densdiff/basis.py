"""Gaussian kernel basis: centers, design matrices, closed-form Gram matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist, pdist

from .data import DataError, Dataset, as_array, check_same_dim, make_rng

DEFAULT_MAX_CENTERS = 200


@dataclass(frozen=True)
class GaussianBasis:
    """``phi_l(x) = exp(-||x - c_l||^2 / (2 sigma^2))`` for each row ``c_l`` of ``centers``."""

    centers: NDArray[np.float64]
    sigma: float

    def __post_init__(self):
        C = np.array(self.centers, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 1:
            raise ValueError("basis needs at least one center")
        if not np.all(np.isfinite(C)):
            raise ValueError("basis centers must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"kernel width must be positive, got {self.sigma}")
        C.setflags(write=False)
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def __call__(self, X: ArrayLike | Dataset) -> NDArray[np.float64]:
        return eval_basis(self, X)


def build_basis(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, sigma: float,
                max_centers: int = DEFAULT_MAX_CENTERS, seed: int = 0) -> GaussianBasis:
    """Center one kernel on every sample of ``Xp`` followed by ``Xq``.

    When the pooled count exceeds ``max_centers`` a seeded uniform subsample
    (without replacement, original order kept) is used instead.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    if max_centers < 1:
        raise ValueError("max_centers must be at least 1")
    pooled = np.vstack([Xp, Xq])
    if pooled.shape[0] > max_centers:
        keep = np.sort(make_rng(seed).choice(pooled.shape[0], size=max_centers, replace=False))
        pooled = pooled[keep]
    return GaussianBasis(pooled, sigma)


def eval_basis(basis: GaussianBasis, X: ArrayLike | Dataset) -> NDArray[np.float64]:
    X = as_array(X)
    if X.shape[1] != basis.d:
        raise DataError(f"dimension mismatch: data has d={X.shape[1]}, basis has d={basis.d}")
    sq = cdist(X, basis.centers, "sqeuclidean")
    return np.exp(-sq / (2.0 * basis.sigma ** 2))


def analytic_gram(basis: GaussianBasis) -> NDArray[np.float64]:
    """``H[l, l'] = integral of phi_l * phi_l'`` over R^d, in closed form."""
    s2 = basis.sigma ** 2
    sq = cdist(basis.centers, basis.centers, "sqeuclidean")
    H = (np.pi * s2) ** (basis.d / 2.0) * np.exp(-sq / (4.0 * s2))
    # cdist is symmetric up to rounding; enforce it exactly
    return np.triu(H) + np.triu(H, 1).T


def median_heuristic(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, seed: int = 0,
                     max_points: int = 1000) -> float:
    """Median pairwise Euclidean distance of the pooled samples."""
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    pooled = np.vstack([Xp, Xq])
    if pooled.shape[0] < 2:
        raise DataError("median heuristic needs at least two points")
    if pooled.shape[0] > max_points:
        keep = np.sort(make_rng(seed).choice(pooled.shape[0], size=max_points, replace=False))
        pooled = pooled[keep]
    med = float(np.median(pdist(pooled)))
    if med <= 0:
        raise DataError("degenerate data: median pairwise distance is zero")
    return med
