from __future__ import annotations

import numpy as np
import pytest
from scipy import optimize, stats
from scipy.special import expit

from balasso.data import Dataset, standardize
from balasso.distributions import NumericalError, RngHandle
from balasso.general import (
    CapStructure,
    GroupGibbsState,
    LsaSurrogate,
    fit_linear_lsa,
    fit_logistic_mle,
    gibbs_step_cap,
    gibbs_step_group,
    gibbs_step_lsa,
    lsa_pseudo_data,
    run_chain_group,
    run_chain_lsa,
)
from balasso.gibbs import ChainConfig, LinearGibbsState, PenaltyMode
from balasso.solvers import NonConvergenceError
from conftest import batch_means_se, simulated


def _lsa_state(p, tau2=1.0):
    return LinearGibbsState(np.zeros(p), 1.0, np.full(p, float(tau2)), np.ones(p), 1.0)


def _group_state(sizes, tau2, beta=None):
    p = int(np.sum(sizes))
    tau2 = np.asarray(tau2, dtype=float)
    return GroupGibbsState(
        np.zeros(p) if beta is None else np.asarray(beta, float),
        1.0, tau2.copy(), np.ones(len(sizes)), 1.0, np.asarray(sizes),
    )


def random_spd(seed, p):
    A = np.random.default_rng(seed).standard_normal((p, p))
    return A @ A.T + p * np.eye(p)


# -- LSA pseudo data ------------------------------------------------------------


def test_pseudo_data_identity():
    Xt, yt = lsa_pseudo_data(LsaSurrogate([1.0, -2.0], np.eye(2)))
    assert np.allclose(Xt, np.eye(2), atol=1e-15) and np.allclose(yt, [1.0, -2.0])


def test_pseudo_data_diagonal_root():
    Xt, _ = lsa_pseudo_data(LsaSurrogate([0.0, 0.0], np.diag([4.0, 9.0])))
    assert np.allclose(Xt, np.diag([2.0, 3.0]), atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_pseudo_data_recomposes(seed):
    Q = random_spd(seed, 3)
    Xt, yt = lsa_pseudo_data(LsaSurrogate(np.ones(3), Q))
    assert np.linalg.norm(Xt.T @ Xt - Q) < 1e-10
    assert np.allclose(Xt, Xt.T)


def test_pseudo_data_rejects_indefinite():
    with pytest.raises(NumericalError):
        lsa_pseudo_data(LsaSurrogate([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        LsaSurrogate([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_linear_lsa_reproduces_rss_differences():
    data = simulated(1, n=50, beta=(1.0, -1.0, 0.0, 2.0))
    sur = fit_linear_lsa(data, sigma2=1.0)
    Xt, yt = lsa_pseudo_data(sur)
    g = np.random.default_rng(2)

    def rss(b):
        r = data.y - data.X @ b
        return r @ r

    for _ in range(20):
        b1, b2 = g.standard_normal((2, 4)) * 3
        lsa = np.sum((yt - Xt @ b1) ** 2) - np.sum((yt - Xt @ b2) ** 2)
        assert abs(lsa - (rss(b1) - rss(b2))) < 1e-8 * max(1.0, abs(lsa))


# -- logistic MLE ---------------------------------------------------------------


def test_logistic_symmetric_design_has_zero_slope():
    x = np.repeat([-1.0, -1.0, 1.0, 1.0], 5)
    y = np.repeat([0.0, 1.0, 0.0, 1.0], 5)
    sur = fit_logistic_mle(Dataset(y, x[:, None]))
    assert abs(sur.beta[0]) < 1e-8
    assert abs(sur.intercept) < 1e-8


def test_logistic_score_equation():
    g = np.random.default_rng(3)
    X = g.standard_normal((300, 4))
    y = (g.random(300) < expit(0.5 + X @ [1.0, -0.5, 0.0, 0.8])).astype(float)
    sur = fit_logistic_mle(Dataset(y, X))
    Z = np.column_stack([np.ones(300), X])
    mu = expit(Z @ np.concatenate([[sur.intercept], sur.beta]))
    assert np.max(np.abs(Z.T @ (y - mu))) < 1e-6
    # the surrogate is the intercept-profiled information
    H = (Z * (mu * (1 - mu))[:, None]).T @ Z
    assert np.allclose(np.linalg.inv(sur.precision), np.linalg.inv(H)[1:, 1:], rtol=1e-8)


def test_logistic_six_points_against_nelder_mead():
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])

    def nll(theta):
        eta = theta[0] + theta[1] * x
        return -np.sum(y * eta - np.logaddexp(0.0, eta))

    res = optimize.minimize(nll, [0.0, 0.0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 10_000})
    sur = fit_logistic_mle(Dataset(y, x[:, None]))
    assert abs(sur.intercept - res.x[0]) < 1e-4
    assert abs(sur.beta[0] - res.x[1]) < 1e-4


@pytest.mark.parametrize("y", [[0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0]])
def test_logistic_separation_is_reported(y):
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    with pytest.raises(NonConvergenceError):
        fit_logistic_mle(Dataset(np.array(y), x[:, None]))


def test_logistic_quasi_separation_is_reported():
    x = np.array([-2.0, 0.0, 0.0, 2.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(NonConvergenceError):
        fit_logistic_mle(Dataset(y, x[:, None]))


def test_logistic_rejects_non_binary():
    with pytest.raises(ValueError):
        fit_logistic_mle(Dataset([0.0, 2.0, 1.0], np.ones((3, 1))))


# -- LSA sampler ----------------------------------------------------------------


def test_lsa_identity_precision_oracle():
    bt = np.array([2.0, -1.0, 0.5])
    sur = LsaSurrogate(bt, np.eye(3))
    store = run_chain_lsa(sur, PenaltyMode("fixed", lambda2=1.0), ChainConfig(0, 100_000, 1, 1),
                          init=_lsa_state(3), freeze=("tau2",))
    se = batch_means_se(store.beta)
    assert np.all(np.abs(store.beta.mean(axis=0) - bt / 2) < 3 * se)
    assert np.allclose(store.beta.var(axis=0), 0.5, rtol=0.02)
    assert np.all(store.sigma2 == 1.0)


def test_lsa_no_shrinkage_centres_on_mle():
    bt = np.array([2.0, -1.0])
    sur = LsaSurrogate(bt, random_spd(4, 2))
    store = run_chain_lsa(sur, PenaltyMode("fixed", lambda2=1.0), ChainConfig(0, 20_000, 1, 2),
                          init=_lsa_state(2, tau2=1e12), freeze=("tau2",))
    se = batch_means_se(store.beta)
    assert np.all(np.abs(store.beta.mean(axis=0) - bt) < 3 * se)


def test_lsa_step_pins_error_variance():
    sur = LsaSurrogate([1.0, 0.0], np.eye(2))
    s = _lsa_state(2)
    s.sigma2 = 7.0
    out = gibbs_step_lsa(s, sur, PenaltyMode(), RngHandle(0))
    assert out.sigma2 == 1.0 and s.sigma2 == 7.0


def test_lsa_zero_mle_gives_exchangeable_lambdas():
    sur = LsaSurrogate(np.zeros(3), np.eye(3) * 20.0)
    store = run_chain_lsa(sur, PenaltyMode(delta=1.0), ChainConfig(1000, 4000, 25, 3))
    lam = store.lambdas
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        assert stats.ks_2samp(lam[:, a], lam[:, b]).pvalue > 0.01


# -- group and CAP samplers -----------------------------------------------------


def test_cap_effective_sizes_and_variances():
    s = CapStructure([2, 3], [(0, 1)])
    assert list(s.k) == [5, 3]
    assert np.allclose(s.group_variance([1.0, 1.0]), [1.0, 0.5])
    assert list(CapStructure([2, 3]).k) == [2, 3]
    chain = CapStructure([1, 1, 1], [(0, 1), (1, 2), (0, 2)])
    assert np.allclose(chain.group_variance([1.0, 2.0, 4.0]), [1.0, 2 / 3, 4 / 7])


def test_cap_rejects_cycles_and_bad_pairs():
    with pytest.raises(ValueError, match="cycle"):
        CapStructure([1, 1, 1], [(0, 1), (1, 2), (2, 0)])
    with pytest.raises(ValueError):
        CapStructure([1, 1], [(0, 0)])
    with pytest.raises(ValueError):
        CapStructure([1, 1], [(0, 5)])


def test_group_sampler_clamps_zero_norm():
    sur = LsaSurrogate([1.0, 0.5, -0.3], np.eye(3))
    out = gibbs_step_group(_group_state([2, 1], [1.0, 1.0]), sur, RngHandle(0), freeze=("beta",))
    assert np.all(np.isfinite(out.tau2)) and np.all(out.tau2 > 0)


def _block_diag_surrogate():
    Q = np.zeros((4, 4))
    Q[:2, :2] = [[3.0, 1.0], [1.0, 2.0]]
    Q[2:, 2:] = [[4.0, -1.0], [-1.0, 1.5]]
    return LsaSurrogate([1.0, -2.0, 0.5, 1.5], Q), [[0, 1], [2, 3]]


def test_group_blockwise_ridge_oracle():
    sur, groups = _block_diag_surrogate()
    tau2 = np.array([0.5, 2.0])
    store = run_chain_group(sur, groups, PenaltyMode("fixed", lambda2=1.0), ChainConfig(0, 50_000, 1, 5),
                            init=_group_state([2, 2], tau2), freeze=("tau2",))
    se = batch_means_se(store.beta)
    for g, t in zip(groups, tau2):
        Qg = sur.precision[np.ix_(g, g)]
        oracle = np.linalg.solve(Qg + np.eye(2) / t, Qg @ sur.beta[g])
        assert np.all(np.abs(store.beta[:, g].mean(axis=0) - oracle) < 3 * se[g])


def test_cap_ancestor_tightens_prior_variance():
    sur, groups = _block_diag_surrogate()
    tau2 = np.array([0.5, 2.0])
    structure = CapStructure([2, 2], [(0, 1)])
    store = run_chain_group(sur, groups, PenaltyMode("fixed", lambda2=1.0), ChainConfig(0, 50_000, 1, 6),
                            structure=structure, init=_group_state([2, 2], tau2), freeze=("tau2",))
    se = batch_means_se(store.beta)
    var = structure.group_variance(tau2)
    for g, v in zip(groups, var):
        Qg = sur.precision[np.ix_(g, g)]
        oracle = np.linalg.solve(Qg + np.eye(2) / v, Qg @ sur.beta[g])
        assert np.all(np.abs(store.beta[:, g].mean(axis=0) - oracle) < 3 * se[g])
    assert store.meta["likelihood"] == "cap"
    assert store.meta["config"]["ancestry"] == [[0, 1]]


def test_group_lambda2_conditional_with_tau_frozen():
    sur, groups = _block_diag_surrogate()
    r, delta = 0.1, 0.5
    tau2 = np.array([0.5, 3.0])
    structure = CapStructure([2, 2], [(0, 1)])
    store = run_chain_group(sur, groups, PenaltyMode(r=r, delta=delta), ChainConfig(0, 100_000, 1, 7),
                            structure=structure, init=_group_state([2, 2], tau2), freeze=("tau2",))
    k = structure.k
    expected = (r + (k + 1) / 2) / (delta + tau2 / 2)
    assert np.all(np.abs(store.lambda2.mean(axis=0) - expected) < 3 * batch_means_se(store.lambda2))


@pytest.mark.slow
def test_singleton_groups_match_lsa_sampler():
    bt = np.array([1.5, 0.0, -0.7])
    sur = LsaSurrogate(bt, random_spd(8, 3) * 5)
    mode = PenaltyMode(delta=0.5)
    a = run_chain_lsa(sur, mode, ChainConfig(2000, 100_000, 1, 8))
    b = run_chain_group(sur, [[0], [1], [2]], mode, ChainConfig(2000, 100_000, 1, 9))
    for fa, fb in [(a.beta, b.beta), (np.log(a.tau2), np.log(b.tau2)), (np.log(a.lambda2), np.log(b.lambda2))]:
        se = np.hypot(batch_means_se(fa), batch_means_se(fb))
        assert np.all(np.abs(fa.mean(axis=0) - fb.mean(axis=0)) < 3 * se)


@pytest.mark.slow
def test_cap_with_empty_relation_is_the_group_sampler():
    sur, groups = _block_diag_surrogate()
    mode = PenaltyMode(delta=0.5)
    same = run_chain_group(sur, groups, mode, ChainConfig(100, 200, 1, 10), structure=CapStructure([2, 2]))
    plain = run_chain_group(sur, groups, mode, ChainConfig(100, 200, 1, 10))
    assert np.array_equal(same.beta, plain.beta)
    a = run_chain_group(sur, groups, mode, ChainConfig(2000, 100_000, 1, 11), structure=CapStructure([2, 2]))
    b = run_chain_group(sur, groups, mode, ChainConfig(2000, 100_000, 1, 12))
    for fa, fb in [(a.beta, b.beta), (np.log(a.tau2), np.log(b.tau2))]:
        se = np.hypot(batch_means_se(fa), batch_means_se(fb))
        assert np.all(np.abs(fa.mean(axis=0) - fb.mean(axis=0)) < 3 * se)


def test_step_functions_leave_input_alone():
    sur, groups = _block_diag_surrogate()
    state = _group_state([2, 2], [1.0, 1.0], beta=np.ones(4))
    out = gibbs_step_cap(state, CapStructure([2, 2], [(0, 1)]), sur, RngHandle(1))
    assert np.all(state.beta == 1.0) and not np.all(out.beta == 1.0)


def test_group_chain_rejects_shared_lambda_and_bad_groups():
    sur, groups = _block_diag_surrogate()
    with pytest.raises(ValueError):
        run_chain_group(sur, groups, PenaltyMode(shared=True), ChainConfig(0, 1))
    with pytest.raises(ValueError):
        run_chain_group(sur, [[0, 1], [2]], PenaltyMode(), ChainConfig(0, 1))


def test_linear_lsa_chain_matches_linear_sampler_scale():
    data = standardize(simulated(13, n=200, beta=(2.0, 0.0, 1.0)), "center")
    sur = fit_linear_lsa(data)
    assert sur.intercept == data.y_mean
    store = run_chain_lsa(sur, PenaltyMode(), ChainConfig(2000, 4000, 1, 13))
    med = np.median(store.lambdas, axis=0)
    assert med[1] > 2 * max(med[0], med[2])
