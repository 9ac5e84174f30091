"""Sign-of-density-difference estimation with a ramp-clipped L1 lower bound.

The fitted function ``g`` maximizes ``mean R(g(X_p)) - mean R(g(X_p'))`` minus a
ridge penalty, where ``R`` clips to [-1, 1]. The objective is a difference of
convex functions and is minimized by the convex-concave procedure (CCCP): the
concave part is replaced by its tightest linear majorizer and the resulting
convex problem is solved by :mod:`densdiff.cqp`. Samples are labeled by the
sign of ``g``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import cqp
from .basis import GaussianBasis, eval_basis
from .data import Dataset, as_array, check_same_dim

DEFAULT_STOP_E = 1e-5
DEFAULT_MAX_OUTER = 100


class FitError(RuntimeError):
    """The fit produced non-finite values."""


def plus_hinge(epsilon: float, z: ArrayLike) -> NDArray[np.float64]:
    """``C_eps(z) = max(0, z - eps)``."""
    return np.maximum(0.0, np.asarray(z, dtype=np.float64) - epsilon)


def hinge(epsilon: float, z: ArrayLike) -> NDArray[np.float64]:
    """``H_eps(z) = max(0, eps - z)``."""
    return np.maximum(0.0, epsilon - np.asarray(z, dtype=np.float64))


def ramp(z: ArrayLike) -> NDArray[np.float64]:
    """Clip to [-1, 1]; equal to ``C_{-1}(z) - C_1(z) - 1``."""
    return np.clip(np.asarray(z, dtype=np.float64), -1.0, 1.0)


def plus_hinge_conjugate(epsilon: float, z: ArrayLike) -> NDArray[np.float64]:
    """Convex conjugate of ``C_eps``: ``eps * z`` on [0, 1], ``+inf`` elsewhere."""
    z = np.asarray(z, dtype=np.float64)
    return np.where((z >= 0) & (z <= 1), epsilon * z, np.inf)


def _outputs(alpha, PhiQ, PhiP, intercept=0.0):
    alpha = np.asarray(alpha, dtype=np.float64)
    PhiQ, PhiP = np.atleast_2d(PhiQ), np.atleast_2d(PhiP)
    if PhiQ.shape[1] != alpha.shape[0] or PhiP.shape[1] != alpha.shape[0]:
        raise ValueError(f"coefficient length {alpha.shape[0]} does not match design matrices "
                         f"({PhiQ.shape[1]}, {PhiP.shape[1]} columns)")
    return PhiQ @ alpha + intercept, PhiP @ alpha + intercept, alpha


def objective(alpha: ArrayLike, PhiQ: ArrayLike, PhiP: ArrayLike, lam: float,
              intercept: float = 0.0) -> float:
    """``J = mean R(g(X_p')) - mean R(g(X_p)) + lam/2 ||alpha||^2``."""
    gq, gp, alpha = _outputs(alpha, PhiQ, PhiP, intercept)
    return float(ramp(gq).mean() - ramp(gp).mean() + 0.5 * lam * alpha @ alpha)


def split_objective(alpha: ArrayLike, PhiQ: ArrayLike, PhiP: ArrayLike, lam: float,
                    intercept: float = 0.0) -> tuple[float, float]:
    """``(J_vex, J_cave)`` with ``J_vex + J_cave = J``.

    Expanding ``R = C_{-1} - C_1 - 1`` in both averages, the two ``-1``
    constants cancel, leaving
    ``J_vex = mean C_{-1}(g') + mean C_1(g) + ridge`` and
    ``J_cave = -mean C_1(g') - mean C_{-1}(g)``.
    """
    gq, gp, alpha = _outputs(alpha, PhiQ, PhiP, intercept)
    vex = plus_hinge(-1, gq).mean() + plus_hinge(1, gp).mean() + 0.5 * lam * float(alpha @ alpha)
    cave = -plus_hinge(1, gq).mean() - plus_hinge(-1, gp).mean()
    return float(vex), float(cave)


@dataclass(frozen=True)
class BoundVars:
    """Multipliers of the linear majorizer: ``b`` for ``X_p'`` rows, ``c`` for ``X_p`` rows."""

    b: NDArray[np.float64]
    c: NDArray[np.float64]

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if np.any((b < 0) | (b > 1)) or np.any((c < 0) | (c > 1)):
            raise ValueError("bound variables must lie in [0, 1]")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


def tighten_bound(alpha: ArrayLike, PhiQ: ArrayLike, PhiP: ArrayLike, intercept: float = 0.0) -> BoundVars:
    """Bound variables that make the majorizer exact at ``alpha``.

    ``b_i = 0`` if ``g(x'_i) < 1`` else 1; ``c_j = 0`` if ``g(x_j) < -1`` else 1.
    """
    gq, gp, _ = _outputs(alpha, PhiQ, PhiP, intercept)
    return BoundVars(np.where(gq < 1, 0.0, 1.0), np.where(gp < -1, 0.0, 1.0))


def concave_bound(alpha: ArrayLike, bound: BoundVars, PhiQ: ArrayLike, PhiP: ArrayLike,
                  intercept: float = 0.0) -> float:
    """Linear majorizer of ``J_cave``: ``mean b (1 - g') + mean c (-1 - g)``."""
    gq, gp, _ = _outputs(alpha, PhiQ, PhiP, intercept)
    if bound.b.shape != gq.shape or bound.c.shape != gp.shape:
        raise ValueError("bound variables do not match the number of samples")
    return float((bound.b * (1.0 - gq)).mean() + (bound.c * (-1.0 - gp)).mean())


@dataclass(frozen=True)
class CccpConfig:
    lam: float
    stop_E: float = DEFAULT_STOP_E
    max_outer: int = DEFAULT_MAX_OUTER
    qp_tol: float = cqp.DEFAULT_TOL

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("regularization must be strictly positive")
        if not self.stop_E > 0:
            raise ValueError("stop_E must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not self.qp_tol > 0:
            raise ValueError("qp_tol must be positive")


@dataclass(frozen=True)
class CccpResult:
    alpha: NDArray[np.float64]
    intercept: float
    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    inexact_solves: int


def cccp(PhiQ: NDArray[np.float64], PhiP: NDArray[np.float64], config: CccpConfig,
         intercept: bool = False, init: tuple[NDArray, float] | None = None) -> CccpResult:
    """Minimize ``J`` over coefficients (and an optional unpenalized intercept).

    Starts from the minimizer of ``J_vex`` unless ``init`` is given, then
    alternates bound tightening and solving the convex upper bound until the
    coefficient step is at most ``config.stop_E``. A subproblem solution that
    does not improve the upper bound on the current point (possible only when
    the solver stops early) is discarded, which keeps the trace monotone.
    """
    PhiQ, PhiP = np.atleast_2d(PhiQ), np.atleast_2d(PhiP)
    if PhiQ.shape[0] < 1 or PhiP.shape[0] < 1:
        raise ValueError("both datasets need at least one sample")
    reduction = cqp.HingeSum.reduction_of(np.vstack([PhiQ, PhiP]), config.lam)
    inexact = 0

    def solve(problem, warm):
        nonlocal inexact
        sol = cqp.solve_upper_bound(problem, config.qp_tol, warm_start=warm,
                                    intercept=intercept, reduction=reduction)
        inexact += not sol.converged
        return sol

    if init is None:
        sol = solve(cqp.UpperBoundProblem.zero_bound(PhiQ, PhiP, config.lam), None)
        alpha, b0 = sol.alpha, sol.intercept
    else:
        sol = None
        alpha, b0 = np.asarray(init[0], dtype=np.float64), float(init[1]) if intercept else 0.0
    trace = [objective(alpha, PhiQ, PhiP, config.lam, b0)]
    converged = False
    it = 0
    for it in range(1, config.max_outer + 1):
        bound = tighten_bound(alpha, PhiQ, PhiP, b0)
        problem = cqp.UpperBoundProblem(PhiQ, PhiP, bound.b, bound.c, config.lam)
        sol = solve(problem, sol)
        new_alpha, new_b0 = sol.alpha, sol.intercept if intercept else 0.0
        if problem.objective(new_alpha, new_b0) > problem.objective(alpha, b0):
            new_alpha, new_b0 = alpha, b0
        step = math.sqrt(float(np.sum((new_alpha - alpha) ** 2)) + (new_b0 - b0) ** 2)
        alpha, b0 = new_alpha, new_b0
        value = objective(alpha, PhiQ, PhiP, config.lam, b0)
        if not (math.isfinite(value) and np.all(np.isfinite(alpha))):
            raise FitError("non-finite objective during CCCP")
        trace.append(value)
        if step <= config.stop_E:
            converged = True
            break
    return CccpResult(alpha, b0, tuple(trace), it, converged, inexact)


@dataclass(frozen=True)
class DsddModel:
    """Kernel model ``g(x) = sum_l alpha_l phi_l(x)``; labels are ``sign(g)``.

    ``feature_mean`` and ``feature_scale``, when set, are applied to raw inputs
    before the basis is evaluated.
    """

    basis: GaussianBasis
    alpha: NDArray[np.float64]
    lam: float
    objective_trace: tuple[float, ...] = ()
    iterations: int = 0
    converged: bool = True
    feature_mean: NDArray[np.float64] | None = None
    feature_scale: NDArray[np.float64] | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if alpha.shape[0] != self.basis.size:
            raise ValueError("coefficient length does not match basis size")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("coefficients must be finite")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))

    def _prepare(self, X):
        X = as_array(X)
        if self.feature_mean is not None:
            X = (X - self.feature_mean) / self.feature_scale
        return X

    def decision_function(self, X: ArrayLike | Dataset) -> NDArray[np.float64]:
        return eval_basis(self.basis, self._prepare(X)) @ self.alpha

    def negated(self) -> DsddModel:
        return DsddModel(self.basis, -self.alpha, self.lam, self.objective_trace, self.iterations,
                         self.converged, self.feature_mean, self.feature_scale)

    def to_json(self) -> str:
        doc = {
            "kind": "dsdd",
            "sigma": self.basis.sigma,
            "centers": self.basis.centers.tolist(),
            "alpha": self.alpha.tolist(),
            "lambda": self.lam,
            "objective_trace": list(self.objective_trace),
            "iterations": self.iterations,
            "converged": self.converged,
        }
        if self.feature_mean is not None:
            doc["feature_mean"] = np.asarray(self.feature_mean).tolist()
            doc["feature_scale"] = np.asarray(self.feature_scale).tolist()
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> DsddModel:
        doc = json.loads(text)
        mean = doc.get("feature_mean")
        scale = doc.get("feature_scale")
        return cls(GaussianBasis(np.array(doc["centers"]), doc["sigma"]), np.array(doc["alpha"]),
                   doc["lambda"], tuple(doc.get("objective_trace", ())), doc.get("iterations", 0),
                   doc.get("converged", True),
                   None if mean is None else np.array(mean), None if scale is None else np.array(scale))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> DsddModel:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def cccp_fit(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, basis: GaussianBasis,
             config: CccpConfig) -> DsddModel:
    """Fit the kernel model on ``X_p`` (positive side) against ``X_p'``."""
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq, basis.centers)
    res = cccp(eval_basis(basis, Xq), eval_basis(basis, Xp), config)
    return DsddModel(basis, res.alpha, config.lam, res.objective_trace, res.iterations, res.converged,
                     diagnostics={"inexact_solves": res.inexact_solves})


def sign_labels(values: ArrayLike) -> NDArray[np.int64]:
    """+1 where ``values >= 0``, else -1."""
    return np.where(np.asarray(values) >= 0, 1, -1).astype(np.int64)


def predict_sign(model: DsddModel, X: ArrayLike | Dataset) -> NDArray[np.int64]:
    return sign_labels(model.decision_function(X))


@dataclass(frozen=True)
class LinearModel:
    """``g(x) = w . x + b``."""

    w: NDArray[np.float64]
    b: float
    objective_trace: tuple[float, ...] = ()
    converged: bool = True

    def decision_function(self, X: ArrayLike | Dataset) -> NDArray[np.float64]:
        return as_array(X) @ self.w + self.b

    def predict(self, X: ArrayLike | Dataset) -> NDArray[np.int64]:
        return sign_labels(self.decision_function(X))


def hinge_relaxed_fit(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, lam: float,
                      tol: float = cqp.DEFAULT_TOL) -> tuple[NDArray[np.float64], float]:
    """Linear model from the convex part of the ramp objective alone.

    Minimizes ``mean H_1(g(X_p)) + mean H_1(-g(X_p')) + lam/2 ||w||^2``, a
    soft-margin SVM that treats the two datasets as the two classes.
    """
    return cqp.solve_hinge(Xp, Xq, lam, tol)


def ramp_linear_fit(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, config: CccpConfig) -> LinearModel:
    """Linear model with intercept minimizing the ramp objective by CCCP.

    With a free intercept the ``J_vex`` minimizer is degenerate (any
    ``g <= -1`` everywhere is optimal), so CCCP starts from the hinge-relaxed
    solution instead.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    w0, b0 = hinge_relaxed_fit(Xp, Xq, config.lam, config.qp_tol)
    res = cccp(Xq, Xp, config, intercept=True, init=(w0, b0))
    return LinearModel(res.alpha, res.intercept, res.objective_trace, res.converged)
