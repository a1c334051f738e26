from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balasso.solvers import (
    GroupL1Problem,
    NonConvergenceError,
    QuadraticL1Problem,
    SolverConfig,
    WeightedL1Problem,
    soft_threshold,
    solve_gram,
    solve_gram_many,
    solve_group_lasso,
    solve_quadratic_lasso,
    solve_weighted_lasso,
)

TOL = SolverConfig().tolerance


def random_problem(seed, n=40, p=5, rho=0.4):
    rng = np.random.default_rng(seed)
    C = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    X = rng.standard_normal((n, p)) @ np.linalg.cholesky(C).T
    beta = rng.choice([0.0, 0.0, 1.5, -2.0], size=p)
    y = X @ beta + rng.standard_normal(n)
    return X, y


def kkt_violation(X, y, beta, lam):
    g = 2 * X.T @ (y - X @ beta)
    nz = beta != 0
    v_nz = np.abs(g[nz] - lam[nz] * np.sign(beta[nz]))
    v_z = np.abs(g[~nz]) - lam[~nz]
    return max(v_nz.max(initial=0.0), v_z.max(initial=0.0))


# -- weighted lasso -------------------------------------------------------------


def test_zero_penalty_gives_least_squares():
    X, y = random_problem(0)
    beta, obj = solve_weighted_lasso(WeightedL1Problem(X, y, np.zeros(5)))
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert np.max(np.abs(beta - ols)) < 1e-8
    assert obj == pytest.approx(np.sum((y - X @ ols) ** 2))


def test_orthonormal_design_soft_thresholds_at_half_lambda():
    rng = np.random.default_rng(1)
    X, _ = np.linalg.qr(rng.standard_normal((5, 3)))
    y = rng.standard_normal(5) * 3
    lam = np.array([0.5, 1.0, 4.0])
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    assert np.allclose(beta, soft_threshold(X.T @ y, lam / 2), atol=1e-10)


def test_large_penalty_shrinks_everything():
    X, y = random_problem(2)
    lam = np.full(5, 2 * np.max(np.abs(X.T @ y)))
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    assert np.all(beta == 0.0)


def test_exact_zeros_without_epsilon():
    X, y = random_problem(3)
    lam = np.array([1.0, 1.0, 200.0, 1.0, 200.0])
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    assert np.count_nonzero(beta == 0.0) >= 1
    assert not np.any((beta != 0) & (np.abs(beta) < 1e-12))


def test_tie_at_the_kink_is_zero():
    # one column, x'y = 1 and lambda = 2: the coordinate sits exactly on the kink
    X = np.array([[1.0], [0.0]])
    y = np.array([1.0, 0.0])
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, [2.0]))
    assert beta[0] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_kkt_conditions(seed):
    X, y = random_problem(seed, n=30, p=6)
    lam = np.random.default_rng(seed + 100).uniform(0.1, 30.0, 6)
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    assert kkt_violation(X, y, beta, lam) < 10 * TOL


def test_monotone_in_penalty_scale():
    X, y = random_problem(7, p=6)
    base = np.random.default_rng(8).uniform(0.5, 3.0, 6)
    norms = []
    beta = None
    for s in np.geomspace(0.01, 100.0, 40):
        beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, s * base), beta0=beta)
        norms.append(np.abs(beta).sum())
    assert np.all(np.diff(norms) <= 1e-9)


def _grid_min(f, centre, half, step):
    axes = [np.arange(c - half, c + half + step / 2, step) for c in centre]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(centre))
    vals = f(mesh)
    return mesh[np.argmin(vals)]


def _brute_force(X, y, lam, box=4.0):
    """Grid minimiser down to step 1e-3.

    A full 1e-3 grid over the box is too large for p = 3, so the search
    starts coarse and refines around the incumbent.  Each refinement
    window spans several coarse steps, so a convex objective cannot lose
    its minimiser between levels.
    """

    def f(B):
        R = y[None, :] - B @ X.T
        return np.einsum("ij,ij->i", R, R) + np.abs(B) @ lam

    centre = np.zeros(X.shape[1])
    half, step = box, 0.1
    while True:
        centre = _grid_min(f, centre, half, step)
        if step <= 1e-3 + 1e-15:
            return centre
        half, step = 5 * step, step / 10


@pytest.mark.parametrize("p,seed", [(1, 0), (2, 1), (2, 2), (3, 3), (3, 4)])
def test_matches_brute_force_grid(p, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, p))
    y = X @ rng.choice([0.0, 1.0, -2.0], size=p) + 0.5 * rng.standard_normal(12)
    lam = rng.uniform(0.5, 8.0, p)
    beta, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    grid = _brute_force(X, y, lam)
    assert np.max(np.abs(beta - grid)) <= 2e-3


def test_nonconvergence_carries_last_iterate():
    X, y = random_problem(9, p=5, rho=0.95)
    with pytest.raises(NonConvergenceError) as info:
        solve_weighted_lasso(WeightedL1Problem(X, y, np.full(5, 0.1)), SolverConfig(1e-14, 1))
    assert info.value.last_iterate is not None
    assert info.value.last_iterate.shape == (5,)


def test_problem_validation():
    with pytest.raises(ValueError):
        WeightedL1Problem(np.ones((3, 2)), np.ones(4), [1.0, 1.0])
    with pytest.raises(ValueError):
        WeightedL1Problem(np.ones((3, 2)), np.ones(3), [1.0, -1.0])
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        QuadraticL1Problem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), [1.0, 1.0])


def test_warm_start_reaches_same_minimiser():
    X, y = random_problem(10)
    lam = np.full(5, 3.0)
    cold, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    warm, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam), beta0=np.ones(5) * 5)
    assert np.allclose(cold, warm, atol=1e-7)


def test_batched_solves_match_single_solves():
    X, y = random_problem(11)
    G, c = X.T @ X, X.T @ y
    T = np.random.default_rng(12).uniform(0.0, 20.0, (25, 5))
    B = solve_gram_many(G, c, T)
    for t, b in zip(T, B):
        assert np.allclose(b, solve_gram(G, c, t), atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 50.0))
def test_kkt_property(seed, scale):
    X, y = random_problem(seed, n=25, p=4)
    lam = scale * np.random.default_rng(seed).uniform(0.2, 2.0, 4)
    beta, obj = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    assert kkt_violation(X, y, beta, lam) < 10 * TOL
    # the minimiser beats small coordinate perturbations
    problem = WeightedL1Problem(X, y, lam)
    for d, j in itertools.product([-1e-3, 1e-3], range(4)):
        e = np.zeros(4)
        e[j] = d
        assert problem.objective(beta + e) >= obj - 1e-9


# -- quadratic (LSA) problems ---------------------------------------------------


def test_identity_precision_is_componentwise_soft_threshold():
    beta = solve_quadratic_lasso(QuadraticL1Problem(np.eye(2), [3.0, 0.1], [1.0, 1.0]))
    assert np.array_equal(beta, [2.0, 0.0])


def test_quadratic_zero_penalty_returns_centre():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    beta = solve_quadratic_lasso(QuadraticL1Problem(P, [1.0, -2.0], [0.0, 0.0]))
    assert np.allclose(beta, [1.0, -2.0], atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_quadratic_matches_weighted_with_doubled_gram(seed):
    X, y = random_problem(seed, p=5)
    lam = np.random.default_rng(seed).uniform(0.5, 20.0, 5)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    b1, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    b2 = solve_quadratic_lasso(QuadraticL1Problem(2 * X.T @ X, ols, lam))
    assert np.max(np.abs(b1 - b2)) < 1e-6


# -- group lasso ----------------------------------------------------------------


def test_single_group_without_penalty_is_ols():
    X, y = random_problem(20, p=4)
    beta = solve_group_lasso(GroupL1Problem(X, y, [[0, 1, 2, 3]], [0.0]))
    assert np.allclose(beta, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-8)


def test_orthonormal_groups_have_closed_form():
    rng = np.random.default_rng(21)
    X, _ = np.linalg.qr(rng.standard_normal((30, 5)))
    y = rng.standard_normal(30) * 2
    groups = [[0, 1], [2, 3, 4]]
    lam = np.array([0.8, 10.0])
    beta = solve_group_lasso(GroupL1Problem(X, y, groups, lam))
    for g, l in zip(groups, lam):
        z = X[:, g].T @ y
        expected = max(0.0, 1 - l / (2 * np.linalg.norm(z))) * z
        assert np.allclose(beta[g], expected, atol=1e-10)


def test_heavily_penalised_group_drops_out():
    X, y = random_problem(22, p=5)
    groups = [[0, 1], [2, 3], [4]]
    beta = solve_group_lasso(GroupL1Problem(X, y, groups, [0.0, 1e8, 0.0]))
    assert np.all(beta[[2, 3]] == 0.0)
    keep = [0, 1, 4]
    reduced = np.linalg.lstsq(X[:, keep], y, rcond=None)[0]
    assert np.max(np.abs(beta[keep] - reduced)) < 1e-6


def test_singleton_groups_match_weighted_lasso():
    X, y = random_problem(23, p=4)
    lam = np.array([1.0, 5.0, 30.0, 2.0])
    b1, _ = solve_weighted_lasso(WeightedL1Problem(X, y, lam))
    b2 = solve_group_lasso(GroupL1Problem(X, y, [[0], [1], [2], [3]], lam))
    assert np.allclose(b1, b2, atol=1e-7)


def test_group_norms_zero_or_positive_and_kkt():
    X, y = random_problem(24, n=50, p=6)
    groups = [[0, 1], [2, 3], [4, 5]]
    lam = np.array([2.0, 40.0, 5.0])
    beta = solve_group_lasso(GroupL1Problem(X, y, groups, lam))
    g = 2 * X.T @ (y - X @ beta)
    for gr, l in zip(groups, lam):
        nb = np.linalg.norm(beta[gr])
        if nb == 0:
            assert np.linalg.norm(g[gr]) <= l + 1e-6
        else:
            assert np.allclose(g[gr], l * beta[gr] / nb, atol=1e-5)


def test_group_validation():
    X, y = random_problem(25, p=3)
    with pytest.raises(ValueError):
        GroupL1Problem(X, y, [[0, 1]], [1.0])
    with pytest.raises(ValueError):
        solve_group_lasso(GroupL1Problem(X, y, [[0], [1, 2]], [1.0, 1.0], ancestry=[(0, 1)]))
