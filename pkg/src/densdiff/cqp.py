"""Convex subproblem solver: ridge plus a weighted sum of plus-hinges.

Both the CCCP upper bound and the hinge-relaxed linear objective have the form

    F(alpha, b0) = sum_k w_k * max(0, u_k . alpha + e_k * b0 - t_k)
                   - a . alpha - a0 * b0 + 1/2 * sum_l ridge_l * alpha_l^2

The max terms are replaced by softplus functions ``tau * log(1 + exp(z / tau))``
and the smooth problem is minimized by damped Newton steps for a decreasing
sequence of temperatures ``tau``; the softplus decreases pointwise with ``tau``,
so the recorded objective never goes up. Newton runs in rank-reduced
coordinates because Gaussian design matrices are numerically low rank.

Once the temperature is small, the sigmoid weights ``beta = expit(z / tau)``
estimate the dual variables and the margins reveal which terms sit at their
kink. The exact finish fixes the remaining terms at weight 0 or 1 and solves
the stationarity equations for the kink weights (and the intercept, if any)
by bounded least squares. The result is certified by its complementarity
violation and its minimum-norm subgradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import lsq_linear
from scipy.special import expit

from .data import Dataset, as_array, check_same_dim

DEFAULT_TOL = 1e-8
DEFAULT_MAX_INNER = 500
_RANK_RTOL = 1e-12
_TEMPERATURES = tuple(10.0 ** -k for k in range(0, 13))


class QpSolverError(RuntimeError):
    """The subproblem solver produced non-finite values."""


@dataclass(frozen=True)
class UpperBoundProblem:
    """Convex majorizer of the ramp objective for fixed bound variables.

    ``PhiQ`` is the design matrix over the second dataset (``X_p'``), ``PhiP``
    over the first (``X_p``); ``bvec`` and ``cvec`` are the bound variables for
    their rows.
    """

    PhiQ: NDArray[np.float64]
    PhiP: NDArray[np.float64]
    bvec: NDArray[np.float64]
    cvec: NDArray[np.float64]
    lam: float

    def __post_init__(self):
        PhiQ = np.atleast_2d(np.asarray(self.PhiQ, dtype=np.float64))
        PhiP = np.atleast_2d(np.asarray(self.PhiP, dtype=np.float64))
        bvec = np.asarray(self.bvec, dtype=np.float64).reshape(-1)
        cvec = np.asarray(self.cvec, dtype=np.float64).reshape(-1)
        if PhiQ.shape[1] != PhiP.shape[1]:
            raise ValueError("design matrices have different basis sizes")
        if PhiQ.shape[0] < 1 or PhiP.shape[0] < 1:
            raise ValueError("both datasets need at least one sample")
        if bvec.shape[0] != PhiQ.shape[0] or cvec.shape[0] != PhiP.shape[0]:
            raise ValueError("bound vectors do not match design matrix rows")
        if np.any((bvec < 0) | (bvec > 1)) or np.any((cvec < 0) | (cvec > 1)):
            raise ValueError("bound variables must lie in [0, 1]")
        if not self.lam > 0:
            raise ValueError("regularization must be strictly positive")
        for name, val in (("PhiQ", PhiQ), ("PhiP", PhiP), ("bvec", bvec), ("cvec", cvec)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def zero_bound(cls, PhiQ, PhiP, lam) -> UpperBoundProblem:
        PhiQ, PhiP = np.atleast_2d(PhiQ), np.atleast_2d(PhiP)
        return cls(PhiQ, PhiP, np.zeros(PhiQ.shape[0]), np.zeros(PhiP.shape[0]), lam)

    def linear_term(self) -> NDArray[np.float64]:
        nq, n = self.PhiQ.shape[0], self.PhiP.shape[0]
        return self.PhiQ.T @ self.bvec / nq + self.PhiP.T @ self.cvec / n

    def intercept_term(self) -> float:
        return self.bvec.mean() + self.cvec.mean()

    def objective(self, alpha: ArrayLike, intercept: float = 0.0) -> float:
        """``F`` with the slack variables eliminated in closed form."""
        alpha = np.asarray(alpha, dtype=np.float64)
        gq = self.PhiQ @ alpha + intercept
        gp = self.PhiP @ alpha + intercept
        lin = float(self.linear_term() @ alpha) + intercept * self.intercept_term()
        return (np.maximum(0.0, gq + 1.0).mean() + np.maximum(0.0, gp - 1.0).mean()
                - lin + 0.5 * self.lam * float(alpha @ alpha))


@dataclass(frozen=True)
class QpSolution:
    alpha: NDArray[np.float64]
    objective: float
    kkt_residual: float
    inner_iterations: int
    converged: bool
    intercept: float = 0.0
    dual: NDArray[np.float64] = field(default=None, repr=False)
    duality_gap: float = math.nan
    trace: NDArray[np.float64] = field(default=None, repr=False)


class HingeSum:
    """One instance of the generic problem; see the module docstring."""

    def __init__(self, U, w, t, a, ridge, e=None, a0=0.0, reduction=None):
        self.U = np.ascontiguousarray(U, dtype=np.float64)
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.t = np.ascontiguousarray(t, dtype=np.float64)
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.ridge = np.ascontiguousarray(np.broadcast_to(ridge, self.a.shape), dtype=np.float64)
        if np.any(self.ridge <= 0):
            raise ValueError("ridge weights must be strictly positive")
        self.inv_ridge = 1.0 / self.ridge
        self.e = None if e is None else np.ascontiguousarray(e, dtype=np.float64)
        self.a0 = float(a0) if e is not None else 0.0
        self._reduction = reduction

    def alpha_of(self, beta):
        return (self.a - self.U.T @ (self.w * beta)) * self.inv_ridge

    def margins(self, alpha, b0=0.0):
        z = self.U @ alpha - self.t
        if self.e is not None:
            z = z + self.e * b0
        return z

    def primal(self, alpha, b0=0.0):
        z = self.margins(alpha, b0)
        return float(self.w @ np.maximum(0.0, z) - self.a @ alpha - self.a0 * b0
                     + 0.5 * self.ridge @ alpha ** 2)

    def dual(self, beta):
        """Dual value in maximization form; equals the optimal ``F`` at the solution."""
        alpha = self.alpha_of(beta)
        return float(-0.5 * self.ridge @ alpha ** 2 - self.w @ (beta * self.t))

    def subgradient(self, alpha, beta, b0, kink_tol):
        """Subgradient of F at (alpha, b0); kinks within ``kink_tol`` take their dual weight."""
        z = self.margins(alpha, b0)
        gamma = np.where(z > kink_tol, 1.0, np.where(z < -kink_tol, 0.0, beta))
        grad = self.ridge * alpha - self.a + self.U.T @ (self.w * gamma)
        if self.e is None:
            return grad
        return np.append(grad, self.w @ (self.e * gamma) - self.a0)

    def violation(self, alpha, beta, b0=0.0):
        """Largest complementarity violation, in margin units."""
        z = self.margins(alpha, b0)
        v = np.where(beta <= 0, np.maximum(z, 0), np.where(beta >= 1, np.maximum(-z, 0), np.abs(z)))
        if self.e is not None:
            v = np.append(v, abs(self.w @ (self.e * beta) - self.a0))
        return float(v.max())

    def certify(self, beta, b0, tol):
        alpha = self.alpha_of(beta)
        viol = self.violation(alpha, beta, b0)
        resid = float(np.linalg.norm(self.subgradient(alpha, beta, b0, max(tol, viol))))
        return alpha, viol, resid

    # -- smoothed descent -------------------------------------------------

    def smoothed_descent(self, temperatures, newton_steps, trace, tol):
        """Damped Newton on softplus-smoothed objectives of decreasing temperature.

        Works in the whitened, rank-reduced coordinates ``v = sqrt(ridge) * alpha
        = V gamma + v_perp``, where ``U / sqrt(ridge) = P S V^T``; ``v_perp``
        only meets the linear term, so it is set in closed form. After each
        cold-enough stage the exact finish is attempted with a band matched to
        the temperature. Returns ``(beta, b0, steps, certified)``.
        """
        G, h, const = self.reduction
        Vt = self._reduction[1]
        a_white = self.a * np.sqrt(self.inv_ridge)
        perp = a_white - Vt.T @ h
        r = G.shape[1]
        has_b = self.e is not None
        e = self.e if has_b else np.zeros(G.shape[0])
        x = np.zeros(r + 1)
        steps = 0
        beta = np.full(G.shape[0], 0.5)

        def parts(x, tau):
            z = G @ x[:r] + e * x[r] - self.t
            u = z / tau
            val = (tau * float(self.w @ np.logaddexp(0.0, u)) - float(h @ x[:r])
                   - self.a0 * x[r] + 0.5 * float(x[:r] @ x[:r]) + const)
            return val, u

        best = None
        for tau in temperatures:
            val, u = parts(x, tau)
            trace.append(val)
            for _ in range(newton_steps - steps):
                s = expit(u)
                ws = self.w * s
                grad = np.append(G.T @ ws - h + x[:r], float(e @ ws) - self.a0)
                curv = self.w * s * (1.0 - s) / tau
                H = np.empty((r + 1, r + 1))
                H[:r, :r] = (G.T * curv) @ G
                H[:r, :r].flat[:: r + 1] += 1.0
                H[:r, r] = H[r, :r] = G.T @ (curv * e)
                H[r, r] = float(curv @ e ** 2) + (1e-12 if has_b else 1.0)
                try:
                    step = -cho_solve(cho_factor(H), grad)
                except np.linalg.LinAlgError:
                    step = -np.linalg.lstsq(H, grad, rcond=None)[0]
                decrement = -float(grad @ step)
                if decrement <= 1e-14 * max(1.0, abs(val)):
                    break
                # Armijo backtracking keeps each stage monotone
                size = 1.0
                while True:
                    cand, cu = parts(x + size * step, tau)
                    if cand <= val - 1e-4 * size * decrement or size < 1e-12:
                        break
                    size *= 0.5
                if cand > val:
                    break
                x, val, u = x + size * step, cand, cu
                trace.append(val)
                steps += 1
            beta = expit(u)
            if tau <= 1e-3:
                alpha = (Vt.T @ x[:r] + perp) * np.sqrt(self.inv_ridge)
                best = self._finish(beta, x[r], tol, trace, bands=(40.0 * tau, 4.0 * tau, 400.0 * tau),
                                    alpha=alpha)
                if best[3]:
                    return best[0], best[1], steps, True
        return beta, x[r], steps, False

    @staticmethod
    def reduction_of(U, ridge):
        """Truncated SVD ``U / sqrt(ridge) = P S V^T`` as ``(P S, V^T)``; depends on design and ridge only."""
        P, s, Vt = np.linalg.svd(np.asarray(U) / np.sqrt(ridge), full_matrices=False)
        keep = s > _RANK_RTOL * (s[0] if s.size else 0.0)
        return P[:, keep] * s[keep], Vt[keep]

    @property
    def reduction(self):
        """``(G, h, const)`` of the reduced smoothed problem."""
        if self._reduction is None:
            self._reduction = self.reduction_of(self.U, self.ridge)
        G, Vt = self._reduction
        a_white = self.a * np.sqrt(self.inv_ridge)
        h = Vt @ a_white
        # the component of a outside the row space is minimized in closed form
        return G, h, -0.5 * (float(a_white @ a_white) - float(h @ h))

    # -- exact finish -----------------------------------------------------

    def polish(self, z, b0, band):
        """Exact KKT solve for the partition of terms guessed from the margins.

        Terms with margin above ``band`` are fixed active (weight 1), below
        ``-band`` inactive (weight 0); the rest are held at the kink, with
        weights (and the intercept, if any) from a bounded least-squares solve.
        """
        kink = np.abs(z) <= band
        new = (z > band).astype(np.float64)
        if not kink.any() and self.e is None:
            return new, b0
        base = self.alpha_of(new)
        UK = self.U[kink]
        G = -(UK * self.inv_ridge) @ (UK * self.w[kink, None]).T
        rhs = self.t[kink] - UK @ base
        lo, hi = np.zeros(kink.sum()), np.ones(kink.sum())
        if self.e is not None:
            g = self.w * self.e
            G = np.vstack([np.column_stack([G, self.e[kink]]),
                           np.append(g[kink], 0.0)])
            rhs = np.append(rhs, self.a0 - g @ new)
            lo, hi = np.append(lo, -np.inf), np.append(hi, np.inf)
        if G.size == 0:
            return new, b0
        fit = lsq_linear(G, rhs, bounds=(lo, hi), method="bvls", tol=1e-15)
        x = fit.x
        if self.e is not None:
            b0, x = float(x[-1]), x[:-1]
        new[kink] = np.clip(x, 0.0, 1.0)
        return new, b0

    def solve(self, tol=DEFAULT_TOL, max_steps=DEFAULT_MAX_INNER, beta0=None, b0_start=0.0):
        trace: list[float] = []
        steps = 0
        best = None
        # cheap path: the partition implied by a warm start is often already optimal
        if beta0 is not None:
            beta0 = np.clip(np.asarray(beta0, dtype=np.float64), 0.0, 1.0)
            best = self._finish(beta0, b0_start, tol, trace)
        if best is None or not best[3]:
            beta, b0, steps, ok = self.smoothed_descent(_TEMPERATURES, max_steps, trace, tol)
            cand = self._finish(beta, b0, tol, trace) if not ok else self._finish(beta, b0, tol, [])
            if best is None or cand[3] or cand[4] < best[4]:
                best = cand
        beta, b0, resid, ok, viol = best
        alpha = self.alpha_of(beta)
        obj = self.primal(alpha, b0)
        if not (math.isfinite(obj) and np.all(np.isfinite(alpha))):
            raise QpSolverError("non-finite solution")
        if not trace:
            trace.append(obj)
        gap = obj - self.dual(beta)
        if self.e is not None:
            gap -= b0 * (self.w @ (self.e * beta) - self.a0)
        return QpSolution(alpha, obj, resid, steps, ok, float(b0), beta, gap, np.array(trace))

    def _finish(self, beta, b0, tol, trace, bands=(1e-10, 1e-8, 1e-6, 1e-4), alpha=None):
        """Certify ``beta``, else try exact finishes from the margins at ``alpha``."""
        _, viol, resid = self.certify(beta, b0, tol)
        z = self.margins(self.alpha_of(beta) if alpha is None else alpha, b0)
        best = (beta, b0, resid, viol <= tol and resid <= tol, viol)
        if best[3]:
            trace.append(self.primal(self.alpha_of(beta), b0))
            return best
        for band in bands:
            cand, cb0 = self.polish(z, b0, band)
            _, viol, resid = self.certify(cand, cb0, tol)
            if viol <= tol and resid <= tol:
                trace.append(self.primal(self.alpha_of(cand), cb0))
                return cand, cb0, resid, True, viol
            if viol < best[4]:
                best = (cand, cb0, resid, False, viol)
        return best


def upper_bound_instance(problem: UpperBoundProblem, intercept: bool = False, reduction=None) -> HingeSum:
    nq, n = problem.PhiQ.shape[0], problem.PhiP.shape[0]
    U = np.vstack([problem.PhiQ, problem.PhiP])
    w = np.concatenate([np.full(nq, 1.0 / nq), np.full(n, 1.0 / n)])
    t = np.concatenate([np.full(nq, -1.0), np.full(n, 1.0)])
    e = np.ones(nq + n) if intercept else None
    return HingeSum(U, w, t, problem.linear_term(), problem.lam, e=e,
                    a0=problem.intercept_term(), reduction=reduction)


def solve_upper_bound(problem: UpperBoundProblem, tol: float = DEFAULT_TOL,
                      max_inner: int = DEFAULT_MAX_INNER, warm_start: QpSolution | None = None,
                      intercept: bool = False, reduction=None) -> QpSolution:
    """Minimize the slack-eliminated upper bound ``F`` to stationarity ``tol``.

    ``warm_start`` reuses the dual point of a previous solution on a problem
    with the same design matrices; ``reduction`` (from
    ``HingeSum.reduction_of``) caches the rank-reducing SVD across such solves. With ``intercept`` an unpenalized offset is added to
    every model output.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    inst = upper_bound_instance(problem, intercept, reduction)
    beta0 = None if warm_start is None else warm_start.dual
    b0 = 0.0 if warm_start is None else warm_start.intercept
    return inst.solve(tol, max_inner, beta0, b0)


def hinge_instance(Xp: NDArray[np.float64], Xq: NDArray[np.float64], lam: float) -> HingeSum:
    n, nq = Xp.shape[0], Xq.shape[0]
    # H_1(g(x)) = max(0, 1 - w.x - b) on Xp; H_1(-g(x')) = max(0, 1 + w.x' + b) on Xq
    U = np.vstack([-Xp, Xq])
    e = np.concatenate([-np.ones(n), np.ones(nq)])
    w = np.concatenate([np.full(n, 1.0 / n), np.full(nq, 1.0 / nq)])
    t = -np.ones(n + nq)
    return HingeSum(U, w, t, np.zeros(Xp.shape[1]), lam, e=e)


def hinge_objective(w: ArrayLike, b: float, Xp, Xq, lam: float) -> float:
    """``mean H_1(g(x)) + mean H_1(-g(x')) + lam/2 ||w||^2`` for ``g = w.x + b``."""
    Xp, Xq = as_array(Xp), as_array(Xq)
    w = np.asarray(w, dtype=np.float64)
    return (np.maximum(0.0, 1.0 - (Xp @ w + b)).mean() + np.maximum(0.0, 1.0 + (Xq @ w + b)).mean()
            + 0.5 * lam * float(w @ w))


def solve_hinge(Xp: ArrayLike | Dataset, Xq: ArrayLike | Dataset, lam: float,
                tol: float = DEFAULT_TOL, max_inner: int = DEFAULT_MAX_INNER) -> tuple[NDArray[np.float64], float]:
    """Linear soft-margin separation of ``Xp`` (side +1) from ``Xq`` (side -1).

    The intercept is unpenalized. Returns ``(w, b)``.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    if not lam > 0:
        raise ValueError("regularization must be strictly positive")
    sol = hinge_instance(Xp, Xq, lam).solve(tol, max_inner)
    return sol.alpha, sol.intercept
