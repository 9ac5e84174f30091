"""Datasets, CSV ingestion, Gaussian-mixture toy problems and fold splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Dataset:
    """An ``n x d`` matrix of unlabeled samples."""

    samples: NDArray[np.float64]

    def __post_init__(self):
        X = np.array(self.samples, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("empty dataset")
        if not np.all(np.isfinite(X)):
            raise DataError("dataset contains non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "samples", X)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class LabeledDataset:
    samples: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __post_init__(self):
        X = Dataset(self.samples).samples
        y = np.asarray(self.labels).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{y.shape[0]} labels for {X.shape[0]} samples")
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("labels must be -1 or +1")
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def unlabeled(self) -> Dataset:
        return Dataset(self.samples)


def as_array(X: ArrayLike | Dataset) -> NDArray[np.float64]:
    """Return the validated sample matrix behind ``X``."""
    if isinstance(X, Dataset):
        return X.samples
    if isinstance(X, LabeledDataset):
        return X.samples
    return Dataset(X).samples


def check_same_dim(*arrays: NDArray) -> int:
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise DataError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True)
class Component:
    mean: NDArray[np.float64]
    cov: NDArray[np.float64]
    weight: float
    label: int


@dataclass(frozen=True)
class MixtureSpec:
    """Class-conditional Gaussian mixtures; weights sum to one within each class."""

    components: tuple[Component, ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = []
        for c in self.components:
            mean = np.asarray(c.mean, dtype=np.float64).reshape(-1)
            cov = np.asarray(c.cov, dtype=np.float64)
            if cov.shape != (mean.size, mean.size):
                raise DataError("covariance shape does not match mean")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise DataError("covariance is not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise DataError("covariance is not positive definite") from None
            if not 0 < c.weight <= 1:
                raise DataError("component weight must lie in (0, 1]")
            if c.label not in (-1, 1):
                raise DataError("component label must be -1 or +1")
            comps.append(Component(mean, cov, float(c.weight), int(c.label)))
        if not comps:
            raise DataError("mixture has no components")
        if len({c.mean.size for c in comps}) != 1:
            raise DataError("components differ in dimension")
        for label in (-1, 1):
            total = math.fsum(c.weight for c in comps if c.label == label)
            if abs(total - 1.0) > 1e-12:
                raise DataError(f"weights of class {label:+d} sum to {total}, not 1")
        object.__setattr__(self, "components", tuple(comps))

    @property
    def d(self) -> int:
        return self.components[0].mean.size

    def of_class(self, label: int) -> list[Component]:
        return [c for c in self.components if c.label == label]


def toy1_spec() -> MixtureSpec:
    """Two unit-covariance Gaussians at -1 and +1 in the plane."""
    eye = np.eye(2)
    return MixtureSpec((
        Component(-np.ones(2), eye, 1.0, 1),
        Component(np.ones(2), eye, 1.0, -1),
    ))


def toy2_spec() -> MixtureSpec:
    """Bimodal classes: +1 on the horizontal axis, -1 on the vertical axis."""
    eye = np.eye(2)
    return MixtureSpec((
        Component(np.array([3.0, 0.0]), eye, 0.5, 1),
        Component(np.array([-3.0, 0.0]), eye, 0.5, 1),
        Component(np.array([0.0, 3.0]), eye, 0.5, -1),
        Component(np.array([0.0, -3.0]), eye, 0.5, -1),
    ))


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """PCG64 generator; the bit stream is fixed across platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_mixture(spec: MixtureSpec, n: int, prior_pos: float, seed: int) -> LabeledDataset:
    """Draw ``n`` labeled points from ``prior_pos * p(x|+1) + (1 - prior_pos) * p(x|-1)``.

    Each sample gets its class from a Bernoulli draw, then a component within
    the class according to the component weights, then a Gaussian draw via the
    Cholesky factor of that component's covariance.
    """
    if not 0 < prior_pos < 1:
        raise DataError(f"class prior must lie in (0, 1), got {prior_pos}")
    if n < 1:
        raise DataError("n must be at least 1")
    rng = make_rng(seed)
    labels = np.where(rng.random(n) < prior_pos, 1, -1)
    X = np.empty((n, spec.d))
    z = rng.standard_normal((n, spec.d))
    u = rng.random(n)
    for label in (1, -1):
        comps = spec.of_class(label)
        edges = np.cumsum([c.weight for c in comps])
        edges[-1] = 1.0
        idx = np.flatnonzero(labels == label)
        which = np.searchsorted(edges, u[idx], side="right")
        for k, comp in enumerate(comps):
            rows = idx[which == k]
            L = np.linalg.cholesky(comp.cov)
            X[rows] = comp.mean + z[rows] @ L.T
    return LabeledDataset(X, labels)


def sample_hinge_example(n: int, prior_pos: float, seed: int, overlapping: bool) -> LabeledDataset:
    """Uniform first coordinate, standard normal second coordinate.

    Class +1 has its first coordinate on [0, 5]; class -1 on [5, 10], or on
    [0, 10] when ``overlapping``.
    """
    if not 0 < prior_pos < 1:
        raise DataError(f"class prior must lie in (0, 1), got {prior_pos}")
    rng = make_rng(seed)
    labels = np.where(rng.random(n) < prior_pos, 1, -1)
    u = rng.random(n)
    lo = np.where(labels == 1, 0.0, 0.0 if overlapping else 5.0)
    hi = np.where(labels == 1, 5.0, 10.0)
    X = np.column_stack([lo + (hi - lo) * u, rng.standard_normal(n)])
    return LabeledDataset(X, labels)


def load_csv(path: str | Path, delimiter: str = ",", header: bool = False) -> Dataset:
    """Read a numeric CSV file, one sample per row."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"row {lineno}: expected {width} columns, found {len(row)}")
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"row {lineno}, column {col}: cannot parse {cell.strip()!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}, column {col}: non-finite value {cell.strip()!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError("empty dataset")
    return Dataset(np.array(rows))


def load_labels(path: str | Path) -> NDArray[np.int64]:
    """Read a single-column file of +1/-1 labels."""
    X = load_csv(path).samples
    if X.shape[1] != 1:
        raise DataError("label file must have exactly one column")
    y = X[:, 0]
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DataError("labels must be -1 or +1")
    return y.astype(np.int64)


def save_csv(path: str | Path, X: ArrayLike) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_labels(path: str | Path, labels: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for v in labels:
            fh.write(f"{int(v):d}\n")


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[NDArray[np.intp], NDArray[np.intp]]]:
    """Shuffle ``0..n-1`` and split into ``k`` (train, validation) pairs."""
    if k < 2 or k > n:
        raise DataError(f"fold count must satisfy 2 <= k <= n (k={k}, n={n})")
    perm = make_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


def standardize(*arrays: NDArray[np.float64]) -> tuple[list[NDArray[np.float64]], NDArray, NDArray]:
    """Z-score every array with the mean and scale of their union.

    Constant coordinates keep unit scale. Returns the transformed arrays and
    the (mean, scale) used.
    """
    pooled = np.vstack(arrays)
    mean = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    scale[scale == 0] = 1.0
    return [(a - mean) / scale for a in arrays], mean, scale
