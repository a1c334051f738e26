"""Cross-validated Lasso and adaptive Lasso reference fits.

Objective is ``(y - Xb)'(y - Xb) + lam * sum_j w_j |b_j|`` with ``w = 1`` for
the Lasso and ``w_j = 1 / |b0_j|`` for the adaptive Lasso.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _cd
from .data import Dataset
from .solvers import NonConvergenceError, SolverConfig

__all__ = ["CvFit", "lasso_cv", "adaptive_lasso_cv", "ols"]


@dataclass
class CvFit:
    beta: np.ndarray
    lam: float
    grid: np.ndarray
    cv_error: np.ndarray


def ols(data: Dataset) -> np.ndarray:
    return np.linalg.lstsq(data.X, data.y, rcond=None)[0]


def _path(X, y, weights, lambdas, cfg: SolverConfig) -> np.ndarray:
    B, status = _cd.cd_gram_path(
        np.ascontiguousarray(X.T @ X), X.T @ y, 0.5 * weights, lambdas,
        cfg.tolerance, cfg.max_iterations,
    )
    if np.any(status != _cd.CONVERGED):
        bad = np.flatnonzero(status != _cd.CONVERGED)
        raise NonConvergenceError(f"lasso path failed at grid points {bad.tolist()[:10]}", B[bad[0]])
    return B


def _cv(data: Dataset, weights, folds: int, n_lambda: int, ratio: float, rng, cfg) -> CvFit:
    X, y = data.X, data.y
    n, p = X.shape
    active = np.isfinite(weights)
    beta = np.zeros(p)
    if not np.any(active):
        return CvFit(beta, np.inf, np.array([]), np.array([]))
    Xa, wa = X[:, active], weights[active]
    lam_max = 2.0 * np.max(np.abs(Xa.T @ y) / wa)
    if lam_max <= 0:
        return CvFit(beta, 0.0, np.array([]), np.array([]))
    grid = lam_max * np.logspace(0.0, np.log10(ratio), n_lambda)
    fold = rng.permutation(np.arange(n) % folds)
    err = np.zeros(n_lambda)
    for k in range(folds):
        tr, te = fold != k, fold == k
        xm, ym = Xa[tr].mean(axis=0), y[tr].mean()
        B = _path(Xa[tr] - xm, y[tr] - ym, wa, grid, cfg)
        resid = (y[te] - ym)[:, None] - (Xa[te] - xm) @ B.T
        err += np.sum(resid**2, axis=0)
    best = int(np.argmin(err))
    beta[active] = _path(Xa, y, wa, grid[: best + 1], cfg)[-1]
    return CvFit(beta, float(grid[best]), grid, err / n)


def lasso_cv(
    data: Dataset,
    rng: np.random.Generator,
    folds: int = 5,
    n_lambda: int = 100,
    ratio: float = 1e-4,
    cfg: SolverConfig = SolverConfig(),
) -> CvFit:
    """Lasso with ``folds``-fold CV over a log-spaced grid from lam_max down
    to ``ratio * lam_max``.  ``data`` should be centred."""
    return _cv(data, np.ones(data.p), folds, n_lambda, ratio, rng, cfg)


def adaptive_lasso_cv(
    data: Dataset,
    rng: np.random.Generator,
    initial: np.ndarray | None = None,
    folds: int = 5,
    n_lambda: int = 100,
    ratio: float = 1e-4,
    cfg: SolverConfig = SolverConfig(),
) -> CvFit:
    """Adaptive Lasso; the initial estimate defaults to OLS when n > p and to
    the CV Lasso otherwise.  Coefficients with a zero initial estimate stay 0."""
    if initial is None:
        initial = ols(data) if data.n > data.p else lasso_cv(data, rng, folds, n_lambda, ratio, cfg).beta
    a = np.abs(np.asarray(initial, float))
    with np.errstate(divide="ignore"):
        w = np.where(a > 0, 1.0 / a, np.inf)
    return _cv(data, w, folds, n_lambda, ratio, rng, cfg)
