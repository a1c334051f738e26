"""Compiled Gibbs sweeps.

The generator passed in is the ``numpy.random.Generator`` owned by the
chain's :class:`~balasso.distributions.RngHandle`; numba advances the same
underlying bit generator, so streams stay reproducible.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .distributions import ig_transform

# lambda2 update rules
LAMBDA_HELD = 0
LAMBDA_PER_UNIT = 1
LAMBDA_SHARED = 2


@njit(cache=True)
def _forward(L, b):
    n = b.shape[0]
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _backward_t(L, b):
    # solves L' x = b
    n = b.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def gaussian_draw(rng, A, rhs, scale):
    """mean A^{-1} rhs plus N(0, scale^2 A^{-1}) noise; returns (draw, ok)."""
    p = rhs.shape[0]
    for i in range(p):
        if not A[i, i] > 0.0:
            return np.zeros(p), False
    try:
        L = np.linalg.cholesky(A)
    except Exception:
        return np.zeros(p), False
    for i in range(p):
        if not (L[i, i] > 0.0 and np.isfinite(L[i, i])):
            return np.zeros(p), False
    w = _forward(L, rhs)
    z = rng.standard_normal(p)
    for i in range(p):
        w[i] += scale * z[i]
    return _backward_t(L, w), True


@njit(cache=True)
def draw_lambda2(rng, tau2, lambda2, delta, shape, rule):
    q = lambda2.shape[0]
    if rule == LAMBDA_PER_UNIT:
        for j in range(q):
            lambda2[j] = rng.standard_gamma(shape[j]) / (delta + 0.5 * tau2[j])
    elif rule == LAMBDA_SHARED:
        lambda2[0] = rng.standard_gamma(shape[0]) / (delta + 0.5 * np.sum(tau2))


@njit(cache=True)
def coefficient_sweep(
    rng, G, c, yty, n, beta, tau2, lambda2, sigma2, delta, lam_shape,
    sample_sigma2, update_beta, update_tau2, lambda_rule, floor,
):
    """One sweep of beta | ., sigma2 | ., 1/tau2 | ., lambda2 | .  (in place).

    Returns (sigma2, ok); ``ok`` is False when the beta precision is not
    positive definite.
    """
    p = c.shape[0]
    if update_beta:
        A = G.copy()
        for j in range(p):
            A[j, j] += 1.0 / tau2[j]
        b, ok = gaussian_draw(rng, A, c, np.sqrt(sigma2))
        if not ok:
            return sigma2, False
        beta[:] = b
    if sample_sigma2:
        Gb = G @ beta
        rss = yty - 2.0 * np.dot(c, beta) + np.dot(beta, Gb)
        if rss < 0.0:
            rss = 0.0
        pen = 0.0
        for j in range(p):
            pen += beta[j] * beta[j] / tau2[j]
        scale = 0.5 * rss + 0.5 * pen
        shape = 0.5 * (n - 1) + 0.5 * p
        sigma2 = scale / rng.standard_gamma(shape)
    shared = lambda2.shape[0] == 1
    if update_tau2:
        for j in range(p):
            l2 = lambda2[0] if shared else lambda2[j]
            absb = abs(beta[j])
            if absb < floor:
                absb = floor
            mu = np.sqrt(l2 * sigma2) / absb
            nu = rng.standard_normal()
            u = rng.random()
            tau2[j] = 1.0 / ig_transform(mu, l2, nu, u)
    draw_lambda2(rng, tau2, lambda2, delta, lam_shape, lambda_rule)
    return sigma2, True


@njit(cache=True)
def group_sweep(
    rng, Q, c, beta, tau2, lambda2, delta, lam_shape,
    starts, cols, anc_ptr, anc_idx, desc_ptr, desc_idx,
    update_beta, update_tau2, lambda_rule, floor,
):
    """Group (and composite-absolute-penalty) sweep on the LSA likelihood.

    Groups are ``cols[starts[j]:starts[j+1]]``.  ``anc_*`` (CSR) lists the
    groups j' with j' -> j, ``desc_*`` the groups j' with j -> j'.  With no
    relation this is the plain group sampler.
    """
    J = starts.shape[0] - 1
    if update_beta:
        Qb = Q @ beta
        for j in range(J):
            g = cols[starts[j]:starts[j + 1]]
            m = g.shape[0]
            prec = 1.0 / tau2[j]
            for k in range(anc_ptr[j], anc_ptr[j + 1]):
                prec += 1.0 / tau2[anc_idx[k]]
            A = np.empty((m, m))
            rhs = np.empty(m)
            old = np.empty(m)
            for a in range(m):
                old[a] = beta[g[a]]
            for a in range(m):
                s = c[g[a]] - Qb[g[a]]
                for b in range(m):
                    A[a, b] = Q[g[a], g[b]]
                    s += Q[g[a], g[b]] * old[b]
                A[a, a] += prec
                rhs[a] = s
            new, ok = gaussian_draw(rng, A, rhs, 1.0)
            if not ok:
                return False
            for b in range(m):
                d = new[b] - old[b]
                if d != 0.0:
                    beta[g[b]] = new[b]
                    for i in range(Qb.shape[0]):
                        Qb[i] += Q[i, g[b]] * d
    if update_tau2:
        for j in range(J):
            ss = 0.0
            for k in range(starts[j], starts[j + 1]):
                ss += beta[cols[k]] ** 2
            for t in range(desc_ptr[j], desc_ptr[j + 1]):
                d = desc_idx[t]
                for k in range(starts[d], starts[d + 1]):
                    ss += beta[cols[k]] ** 2
            norm = np.sqrt(ss)
            if norm < floor:
                norm = floor
            l2 = lambda2[j]
            mu = np.sqrt(l2) / norm
            nu = rng.standard_normal()
            u = rng.random()
            tau2[j] = 1.0 / ig_transform(mu, l2, nu, u)
    draw_lambda2(rng, tau2, lambda2, delta, lam_shape, lambda_rule)
    return True
