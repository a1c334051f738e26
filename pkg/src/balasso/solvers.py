"""Conditional-mode solvers for weighted l1 and group penalties.

Conventions
-----------
``solve_weighted_lasso`` minimises ``(y - Xb)'(y - Xb) + sum_j lam_j |b_j|``.
There is no 1/2 on the residual sum of squares, so each coordinate is
soft-thresholded at ``lam_j / 2``.  ``solve_quadratic_lasso`` minimises
``0.5 (b - b0)' Q (b - b0) + sum_j lam_j |b_j|`` and thresholds at
``lam_j``.  ``solve_group_lasso`` uses the residual-sum-of-squares
convention of ``solve_weighted_lasso`` with group norms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import _cd

__all__ = [
    "SolverConfig",
    "NonConvergenceError",
    "WeightedL1Problem",
    "QuadraticL1Problem",
    "GroupL1Problem",
    "solve_weighted_lasso",
    "solve_quadratic_lasso",
    "solve_group_lasso",
    "solve_gram",
    "solve_gram_many",
    "soft_threshold",
]


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-8
    max_iterations: int = 100_000

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


class NonConvergenceError(RuntimeError):
    """Raised when a solver stops before meeting its tolerance.

    ``last_iterate`` holds the final coefficient vector, ``index`` the
    offending draw for batched solves.
    """

    def __init__(self, message: str, last_iterate=None, index: int | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.index = index


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _as_penalties(lam, p: int) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (p,)).copy()
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("penalties must be non-negative")
    return lam


@dataclass
class WeightedL1Problem:
    X: np.ndarray
    y: np.ndarray
    penalties: np.ndarray

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        self.penalties = _as_penalties(self.penalties, self.X.shape[1])

    def objective(self, beta) -> float:
        r = self.y - self.X @ beta
        return float(r @ r + self.penalties @ np.abs(beta))


@dataclass
class QuadraticL1Problem:
    precision: np.ndarray
    center: np.ndarray
    penalties: np.ndarray

    def __post_init__(self) -> None:
        self.precision = np.atleast_2d(np.asarray(self.precision, dtype=float))
        self.center = np.asarray(self.center, dtype=float).ravel()
        p = self.center.shape[0]
        if self.precision.shape != (p, p):
            raise ValueError("precision must be p x p")
        if not np.allclose(self.precision, self.precision.T):
            raise ValueError("precision must be symmetric")
        self.penalties = _as_penalties(self.penalties, p)

    def objective(self, beta) -> float:
        d = np.asarray(beta) - self.center
        return float(0.5 * d @ self.precision @ d + self.penalties @ np.abs(beta))


@dataclass
class GroupL1Problem:
    X: np.ndarray
    y: np.ndarray
    groups: Sequence[Sequence[int]]
    penalties: np.ndarray
    ancestry: Sequence[tuple[int, int]] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on the number of rows")
        self.groups = [np.asarray(g, dtype=int) for g in self.groups]
        cols = np.sort(np.concatenate(self.groups)) if self.groups else np.array([], int)
        if not np.array_equal(cols, np.arange(self.X.shape[1])):
            raise ValueError("groups must partition the columns of X")
        self.penalties = _as_penalties(self.penalties, len(self.groups))

    def objective(self, beta) -> float:
        r = self.y - self.X @ beta
        norms = np.array([np.linalg.norm(beta[g]) for g in self.groups])
        return float(r @ r + self.penalties @ norms)


def _check_status(status: int, beta: np.ndarray, cfg: SolverConfig, what: str) -> None:
    if status == _cd.MAX_ITER:
        raise NonConvergenceError(
            f"{what}: no convergence in {cfg.max_iterations} sweeps", beta.copy()
        )
    if status == _cd.NOT_MONOTONE:
        raise NonConvergenceError(f"{what}: objective increased during a sweep", beta.copy())


def solve_gram(G, c, thresholds, cfg: SolverConfig = SolverConfig(), beta0=None) -> np.ndarray:
    """Minimise ``0.5 b'Gb - c'b + sum t_j |b_j|`` by coordinate descent."""
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    t = np.ascontiguousarray(thresholds, dtype=float)
    beta = np.zeros(c.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    status, _, _ = _cd.cd_gram(G, c, t, beta, cfg.tolerance, cfg.max_iterations)
    _check_status(status, beta, cfg, "coordinate descent")
    return beta


def solve_gram_many(G, c, thresholds, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Row-wise batched :func:`solve_gram`, warm-started from the previous row."""
    T = np.ascontiguousarray(np.atleast_2d(thresholds), dtype=float)
    B, status = _cd.cd_gram_many(
        np.ascontiguousarray(G, dtype=float),
        np.ascontiguousarray(c, dtype=float),
        T,
        cfg.tolerance,
        cfg.max_iterations,
    )
    bad = np.flatnonzero(status != _cd.CONVERGED)
    if bad.size:
        i = int(bad[0])
        raise NonConvergenceError(
            f"solver failed on draw(s) {bad.tolist()[:10]} (status {int(status[i])})",
            B[i].copy(),
            index=i,
        )
    return B


def solve_weighted_lasso(
    problem: WeightedL1Problem, cfg: SolverConfig = SolverConfig(), beta0=None
) -> tuple[np.ndarray, float]:
    X, y = problem.X, problem.y
    beta = solve_gram(X.T @ X, X.T @ y, problem.penalties / 2.0, cfg, beta0)
    return beta, problem.objective(beta)


def solve_quadratic_lasso(
    problem: QuadraticL1Problem, cfg: SolverConfig = SolverConfig(), beta0=None
) -> np.ndarray:
    Q = problem.precision
    return solve_gram(Q, Q @ problem.center, problem.penalties, cfg, beta0)


def _block_minimiser(evals, evecs, s, t) -> np.ndarray:
    """argmin_b 0.5 b'Hb - s'b + t||b|| with H = V diag(evals) V'."""
    norm_s = np.linalg.norm(s)
    if norm_s <= t:
        return np.zeros_like(s)
    w = evecs.T @ s
    if t == 0.0:
        inv = np.where(evals > 1e-12 * max(evals.max(), 1.0), 1.0 / evals, 0.0)
        return evecs @ (inv * w)

    # b = (H + k I)^{-1} s with k = t/||b||; solve sum w^2 k^2/(e+k)^2 = t^2 for k.
    def f(k):
        return np.sum((w * k / (evals + k)) ** 2) - t * t

    ratio = t / norm_s
    hi = max(evals.max(), 1e-300) * ratio / (1.0 - ratio)
    hi = hi * 2.0 + 1e-300
    while f(hi) < 0:
        hi *= 2.0
    k = optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return evecs @ (w / (evals + k))


def solve_group_lasso(
    problem: GroupL1Problem, cfg: SolverConfig = SolverConfig(), beta0=None
) -> np.ndarray:
    """Block coordinate descent with exact groupwise minimisation."""
    if len(problem.ancestry):
        raise ValueError("the group solver does not handle ancestry relations")
    X, y = problem.X, problem.y
    G = X.T @ X
    c = X.T @ y
    t = problem.penalties / 2.0
    groups = problem.groups
    eig = [np.linalg.eigh(G[np.ix_(g, g)]) for g in groups]
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    g_beta = G @ beta

    def objective():
        norms = np.array([np.linalg.norm(beta[gr]) for gr in groups])
        return 0.5 * beta @ g_beta - c @ beta + t @ norms

    obj = objective()
    for _ in range(cfg.max_iterations):
        max_delta = 0.0
        for j, gr in enumerate(groups):
            old = beta[gr].copy()
            s = c[gr] - g_beta[gr] + G[np.ix_(gr, gr)] @ old
            new = _block_minimiser(eig[j][0], eig[j][1], s, t[j])
            delta = new - old
            if np.any(delta):
                beta[gr] = new
                g_beta += G[:, gr] @ delta
                max_delta = max(max_delta, float(np.max(np.abs(delta))))
        new_obj = objective()
        if new_obj > obj + 1e-9 * (1.0 + abs(obj)):
            raise NonConvergenceError("group lasso: objective increased", beta.copy())
        obj = new_obj
        if max_delta < cfg.tolerance:
            return beta
    raise NonConvergenceError(
        f"group lasso: no convergence in {cfg.max_iterations} sweeps", beta.copy()
    )
