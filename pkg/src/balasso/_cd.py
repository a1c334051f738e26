"""Compiled coordinate-descent kernels.

All kernels minimise the Gram-form objective

    0.5 * b' G b - c' b + sum_j t_j |b_j|

by cyclic exact coordinate minimisation.  Callers translate their problem
into (G, c, t).  A solve has converged once a full sweep moves no
coefficient by ``tol`` or more and the subgradient optimality conditions
hold to within ``tol``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# Status codes returned by the kernels.
CONVERGED = 0
MAX_ITER = 1
NOT_MONOTONE = 2


@njit(cache=True)
def _objective(G_beta, beta, c, t):
    val = 0.0
    for j in range(beta.shape[0]):
        val += 0.5 * beta[j] * G_beta[j] - c[j] * beta[j]
        if beta[j] != 0.0:
            val += t[j] * abs(beta[j])
    return val


@njit(cache=True)
def _kkt_residual(g, beta, c, t):
    """Largest subgradient violation, on the Gram scale."""
    worst = 0.0
    for j in range(beta.shape[0]):
        r = c[j] - g[j]
        if beta[j] > 0.0:
            v = abs(r - t[j])
        elif beta[j] < 0.0:
            v = abs(r + t[j])
        else:
            v = abs(r) - t[j]
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def cd_gram(G, c, t, beta, tol, max_iter):
    """Solve in place starting from ``beta``; returns (status, sweeps, objective)."""
    p = beta.shape[0]
    g = G @ beta
    obj = _objective(g, beta, c, t)
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            old = beta[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                rho = c[j] - g[j] + gjj * old
                # |rho| == t_j lands on zero
                if rho > t[j]:
                    new = (rho - t[j]) / gjj
                elif rho < -t[j]:
                    new = (rho + t[j]) / gjj
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    g[k] += G[k, j] * delta
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        new_obj = _objective(g, beta, c, t)
        if new_obj > obj + 1e-9 * (1.0 + abs(obj)):
            return NOT_MONOTONE, sweep, new_obj
        obj = new_obj
        # small steps alone can hide a sizeable gradient when G_jj is large
        if max_delta < tol and _kkt_residual(g, beta, c, t) < tol:
            return CONVERGED, sweep, obj
    return MAX_ITER, max_iter, obj


@njit(cache=True)
def cd_gram_many(G, c, T, tol, max_iter):
    """One solve per row of the threshold matrix ``T``, warm-started along rows.

    Returns (B, status) where ``B[i]`` solves the problem with thresholds
    ``T[i]`` and ``status[i]`` is its kernel status code.
    """
    n_draws, p = T.shape
    B = np.zeros((n_draws, p))
    status = np.zeros(n_draws, dtype=np.int64)
    beta = np.zeros(p)
    for i in range(n_draws):
        st, _, _ = cd_gram(G, c, T[i], beta, tol, max_iter)
        status[i] = st
        B[i] = beta
    return B, status


@njit(cache=True)
def cd_gram_path(G, c, weights, lambdas, tol, max_iter):
    """Solutions along a decreasing grid of scalar penalties times ``weights``."""
    p = c.shape[0]
    B = np.zeros((lambdas.shape[0], p))
    status = np.zeros(lambdas.shape[0], dtype=np.int64)
    beta = np.zeros(p)
    for i in range(lambdas.shape[0]):
        st, _, _ = cd_gram(G, c, lambdas[i] * weights, beta, tol, max_iter)
        status[i] = st
        B[i] = beta
    return B, status
