"""Metrics, cross-validation for DSDD, and the repeated-trial benchmark harness."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import baselines
from .basis import DEFAULT_MAX_CENTERS, build_basis, eval_basis, median_heuristic
from .data import DataError, LabeledDataset, MixtureSpec, as_array, check_same_dim, kfold_indices, \
    make_rng, sample_mixture, standardize
from .dsdd import CccpConfig, DsddModel, FitError, cccp, ramp, sign_labels

SIGMA_MULTIPLIERS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0)
DEFAULT_FOLDS = 5
METHODS = ("dsdd", "lsdd", "kde", "km", "sc")


@dataclass(frozen=True)
class LabelingResult:
    labels_p: NDArray[np.int64]
    labels_q: NDArray[np.int64]
    method: str
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def flipped(self) -> LabelingResult:
        return LabelingResult(-self.labels_p, -self.labels_q, self.method, self.hyperparams, self.diagnostics)


def _mismatches(result, truth_p, truth_q):
    truth_p, truth_q = np.asarray(truth_p).reshape(-1), np.asarray(truth_q).reshape(-1)
    if truth_p.shape != np.shape(result.labels_p) or truth_q.shape != np.shape(result.labels_q):
        raise ValueError("label vectors and ground truth differ in length")
    return (int(np.sum(result.labels_p != truth_p)), int(np.sum(result.labels_q != truth_q)),
            truth_p.size, truth_q.size)


def mcr(result: LabelingResult, truth_p: ArrayLike, truth_q: ArrayLike) -> float:
    """Misclassification rate pooled over both datasets."""
    ep, eq, n, nq = _mismatches(result, truth_p, truth_q)
    return (ep + eq) / (n + nq)


def per_dataset_error_sum(result: LabelingResult, truth_p: ArrayLike, truth_q: ArrayLike) -> float:
    """Sum of the two per-dataset error rates; a diagnostic that may exceed 1."""
    ep, eq, n, nq = _mismatches(result, truth_p, truth_q)
    return ep / n + eq / nq


def ler(result: LabelingResult, truth_p: ArrayLike, truth_q: ArrayLike) -> float:
    """Labeling error rate ``min(MCR, 1 - MCR)``, invariant to swapping the two labels."""
    ep, eq, n, nq = _mismatches(result, truth_p, truth_q)
    wrong = ep + eq
    return min(wrong, n + nq - wrong) / (n + nq)


def expected_random_ler_exact(m: int) -> Fraction:
    """Mean labeling error rate of a uniformly random labeling of ``m`` samples."""
    if m < 1:
        raise ValueError("m must be at least 1")
    total = sum(min(i, m - i) * math.comb(m, i) for i in range(m + 1))
    return Fraction(total, 2 ** m * m)


def expected_random_ler(m: int) -> float:
    return float(expected_random_ler_exact(m))


# -- cross-validation ------------------------------------------------------


@dataclass(frozen=True)
class CvResult:
    sigma: float
    lam: float
    scores: NDArray[np.float64]
    sigma_grid: tuple[float, ...]
    lambda_grid: tuple[float, ...]


def cross_validate_dsdd(Xp, Xq, sigma_grid: Sequence[float], lambda_grid: Sequence[float],
                        folds: int = DEFAULT_FOLDS, seed: int = 0,
                        max_centers: int = DEFAULT_MAX_CENTERS, config: CccpConfig | None = None) -> CvResult:
    """Grid search scored by the unregularized held-out ramp objective.

    Each fold fits on the training parts of both datasets and scores
    ``mean R(g(val_q)) - mean R(g(val_p))``; scores are averaged over folds.
    The smallest mean wins, with ties going to larger sigma then larger lambda.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    baselines._check_grids(sigma_grid, lambda_grid)
    if folds > min(Xp.shape[0], Xq.shape[0]):
        raise DataError(f"{folds} folds need at least {folds} samples in each dataset")
    fp = kfold_indices(Xp.shape[0], folds, seed)
    fq = kfold_indices(Xq.shape[0], folds, seed + 1)
    scores = np.zeros((len(sigma_grid), len(lambda_grid)))
    for (tp, vp), (tq, vq) in zip(fp, fq):
        for i, sigma in enumerate(sigma_grid):
            basis = build_basis(Xp[tp], Xq[tq], sigma, max_centers, seed)
            Pp, Pq = eval_basis(basis, Xp), eval_basis(basis, Xq)
            for j, lam in enumerate(lambda_grid):
                cfg = _config(config, lam)
                alpha = cccp(Pq[tq], Pp[tp], cfg).alpha
                scores[i, j] += (ramp(Pq[vq] @ alpha).mean() - ramp(Pp[vp] @ alpha).mean()) / folds
    i, j = baselines.select_cell(scores, sigma_grid, lambda_grid)
    return CvResult(float(sigma_grid[i]), float(lambda_grid[j]), scores,
                    tuple(map(float, sigma_grid)), tuple(map(float, lambda_grid)))


def _config(base: CccpConfig | None, lam: float) -> CccpConfig:
    if base is None:
        return CccpConfig(lam)
    return CccpConfig(lam, base.stop_E, base.max_outer, base.qp_tol)


# -- labeling a pair with any method ------------------------------------------


@dataclass(frozen=True)
class MethodOptions:
    sigma_multipliers: tuple[float, ...] = SIGMA_MULTIPLIERS
    lambdas: tuple[float, ...] = LAMBDA_GRID
    folds: int = DEFAULT_FOLDS
    max_centers: int = DEFAULT_MAX_CENTERS
    sigma: float | None = None
    lam: float | None = None
    knn: int = 7
    standardize: bool = True


def label_pair(method: str, Xp, Xq, options: MethodOptions = MethodOptions(), seed: int = 0):
    """Label both datasets with ``method``; returns ``(LabelingResult, model or None)``.

    Features are standardized over the pooled pair first. Kernel widths are
    grid multiples of the median pairwise distance unless ``options.sigma``
    fixes them (in standardized units); ``options.sigma`` together with
    ``options.lam`` skips cross-validation.
    """
    Xp, Xq = as_array(Xp), as_array(Xq)
    check_same_dim(Xp, Xq)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if options.standardize:
        (Zp, Zq), mean, scale = standardize(Xp, Xq)
    else:
        Zp, Zq, mean, scale = Xp, Xq, None, None
    n = Zp.shape[0]
    seed = int(seed)

    def grid():
        if options.sigma is not None:
            return (float(options.sigma),)
        med = median_heuristic(Zp, Zq, seed)
        return tuple(m * med for m in options.sigma_multipliers)

    if method in ("km", "sc"):
        pooled = np.vstack([Zp, Zq])
        if method == "km":
            lab = baselines.kmeans_label(pooled, seed)
        else:
            lab = baselines.spectral_cluster(pooled, options.knn, seed)
        return LabelingResult(lab[:n], lab[n:], method), None
    if method == "kde":
        lp, lq, sp, sq = baselines.kde_label(Zp, Zq, grid())
        return LabelingResult(lp, lq, method, {"sigma_p": sp, "sigma_q": sq}), None
    lambdas = (float(options.lam),) if options.lam is not None else tuple(options.lambdas)
    sigmas = grid()
    fixed = len(sigmas) == 1 and len(lambdas) == 1
    if method == "lsdd":
        if fixed:
            sigma, lam = sigmas[0], lambdas[0]
        else:
            sigma, lam, _ = baselines.lsdd_cross_validate(Zp, Zq, sigmas, lambdas, options.folds, seed,
                                                          options.max_centers)
        model = baselines.lsdd_fit(Zp, Zq, sigma, lam, options.max_centers, seed)
        return LabelingResult(baselines.lsdd_label(model, Zp), baselines.lsdd_label(model, Zq), method,
                              {"sigma": sigma, "lambda": lam}), model
    if fixed:
        sigma, lam = sigmas[0], lambdas[0]
    else:
        cv = cross_validate_dsdd(Zp, Zq, sigmas, lambdas, options.folds, seed, options.max_centers)
        sigma, lam = cv.sigma, cv.lam
    basis = build_basis(Zp, Zq, sigma, options.max_centers, seed)
    Pp, Pq = eval_basis(basis, Zp), eval_basis(basis, Zq)
    res = cccp(Pq, Pp, CccpConfig(lam))
    model = DsddModel(basis, res.alpha, lam, res.objective_trace, res.iterations, res.converged,
                      mean, scale)
    diag = {"iterations": res.iterations, "converged": res.converged,
            "inexact_solves": res.inexact_solves, "objective_trace": list(res.objective_trace)}
    return LabelingResult(sign_labels(Pp @ res.alpha), sign_labels(Pq @ res.alpha), method,
                          {"sigma": sigma, "lambda": lam}, diag), model


# -- benchmark ----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...]
    prior_p: float
    prior_q: float
    n: int
    nq: int
    trials: int = 1
    seed: int = 0
    sigma_multipliers: tuple[float, ...] = SIGMA_MULTIPLIERS
    lambdas: tuple[float, ...] = LAMBDA_GRID
    folds: int = DEFAULT_FOLDS
    max_centers: int = DEFAULT_MAX_CENTERS

    def __post_init__(self):
        for p in (self.prior_p, self.prior_q):
            if not 0 < p < 1:
                raise ValueError(f"class priors must lie in (0, 1), got {p}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.n < 1 or self.nq < 1:
            raise ValueError("sample sizes must be positive")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ValueError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
        for name in ("methods", "sigma_multipliers", "lambdas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def options(self) -> MethodOptions:
        return MethodOptions(tuple(self.sigma_multipliers), tuple(self.lambdas), self.folds, self.max_centers)


def resample_pair(source: LabeledDataset | MixtureSpec, n: int, nq: int, prior_p: float, prior_q: float,
                  seed) -> tuple[LabeledDataset, LabeledDataset]:
    """Draw a dataset pair with the given class priors.

    A mixture is sampled afresh. A finite labeled source is subsampled without
    replacement and without overlap between the two datasets, taking
    ``round(n * prior)`` positives for each.
    """
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    sp, sq = ss.spawn(2)
    if isinstance(source, MixtureSpec):
        return sample_mixture(source, n, prior_p, sp), sample_mixture(source, nq, prior_q, sq)
    rng = make_rng(sp)
    pos = rng.permutation(np.flatnonzero(source.labels == 1))
    neg = rng.permutation(np.flatnonzero(source.labels == -1))
    kp, kq = round(n * prior_p), round(nq * prior_q)
    need_pos, need_neg = kp + kq, (n - kp) + (nq - kq)
    if pos.size < need_pos or neg.size < need_neg:
        raise DataError(f"source has {pos.size} positives and {neg.size} negatives; "
                        f"need {need_pos} and {need_neg}")
    ip = rng.permutation(np.concatenate([pos[:kp], neg[:n - kp]]))
    iq = rng.permutation(np.concatenate([pos[kp:need_pos], neg[n - kp:need_neg]]))
    X, y = source.samples, source.labels
    return LabeledDataset(X[ip], y[ip]), LabeledDataset(X[iq], y[iq])


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    method: str
    ler: float | None
    hyperparams: dict
    error: str | None = None


def _trial_seeds(seed: int, trials: int):
    return np.random.SeedSequence(seed).spawn(trials)


def run_trial(config: ExperimentConfig, source, trial: int) -> list[TrialRecord]:
    ss = _trial_seeds(config.seed, config.trials)[trial]
    data_seed, method_ss = ss.spawn(2)
    P, Q = resample_pair(source, config.n, config.nq, config.prior_p, config.prior_q, data_seed)
    method_seed = int(method_ss.generate_state(1)[0] & 0x7FFFFFFF)
    out = []
    for method in config.methods:
        try:
            res, _ = label_pair(method, P.samples, Q.samples, config.options(), method_seed)
            out.append(TrialRecord(trial, method, ler(res, P.labels, Q.labels), res.hyperparams))
        except (DataError, FitError, np.linalg.LinAlgError, ValueError) as exc:
            out.append(TrialRecord(trial, method, None, {}, f"{type(exc).__name__}: {exc}"))
    return out


def _trial_job(args):
    return run_trial(*args)


def worker_count(trials: int) -> int:
    env = os.environ.get("DENSDIFF_THREADS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, trials))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    mean: float | None
    std: float | None
    completed: int
    failed: int


@dataclass(frozen=True)
class ResultTable:
    config: ExperimentConfig
    summaries: tuple[MethodSummary, ...]
    records: tuple[TrialRecord, ...]
    random_baseline: float

    def summary(self, method: str) -> MethodSummary:
        return next(s for s in self.summaries if s.method == method)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "random_baseline": {"m": self.config.n + self.config.nq, "ler": self.random_baseline},
            "summary": [asdict(s) for s in self.summaries],
            "trials": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        rows = [("method", "mean LER", "std", "done", "failed")]
        for s in self.summaries:
            rows.append((s.method, _fmt(s.mean), _fmt(s.std), str(s.completed), str(s.failed)))
        rows.append((f"random(m={self.config.n + self.config.nq})", _fmt(self.random_baseline), "", "", ""))
        widths = [max(len(r[k]) for r in rows) for k in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _fmt(v):
    return "-" if v is None else f"{v:.4f}"


def run_benchmark(config: ExperimentConfig, source: LabeledDataset | MixtureSpec) -> ResultTable:
    """Repeat resampling and labeling ``config.trials`` times; summarize LER per method.

    Trials use independent child seeds of ``config.seed`` and may run in worker
    processes (``DENSDIFF_THREADS``); results are ordered by trial index, so
    the table does not depend on scheduling. A method that raises on a trial
    is recorded as failed for that trial and left out of the mean.
    """
    jobs = [(config, source, t) for t in range(config.trials)]
    workers = worker_count(config.trials)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            per_trial = list(pool.map(_trial_job, jobs))
    else:
        per_trial = [_trial_job(j) for j in jobs]
    records = tuple(r for batch in per_trial for r in batch)
    summaries = []
    for method in config.methods:
        vals = [r.ler for r in records if r.method == method and r.ler is not None]
        failed = sum(1 for r in records if r.method == method and r.ler is None)
        summaries.append(MethodSummary(method, float(np.mean(vals)) if vals else None,
                                       float(np.std(vals)) if vals else None, len(vals), failed))
    return ResultTable(config, tuple(summaries), records, expected_random_ler(config.n + config.nq))
