"""BaLasso beyond Gaussian regression via the least-squares approximation.

A general negative log-likelihood is replaced by its second-order expansion
at the MLE, ``0.5 (b - b0)' Q (b - b0)``, with ``Q`` the observed
information.  The coefficient-level sampler then reuses
:class:`~balasso.gibbs.GaussianKernel` with the error variance pinned at 1;
group and composite-absolute-penalty (CAP) samplers are defined here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from . import _sweeps
from .data import Dataset
from .distributions import NumericalError, RngHandle
from .gibbs import (
    BETA_FLOOR,
    ChainConfig,
    ChainStore,
    GaussianKernel,
    LinearGibbsState,
    PenaltyMode,
    run_chain,
)
from .solvers import NonConvergenceError

__all__ = [
    "LsaSurrogate",
    "CapStructure",
    "GroupGibbsState",
    "GroupKernel",
    "fit_logistic_mle",
    "fit_linear_lsa",
    "lsa_pseudo_data",
    "lsa_kernel",
    "gibbs_step_lsa",
    "gibbs_step_group",
    "gibbs_step_cap",
    "run_chain_lsa",
    "run_chain_group",
]


@dataclass
class LsaSurrogate:
    """MLE ``beta`` and observed information ``precision`` at the MLE.

    Callers with another likelihood (Cox, Poisson, ...) can build one from
    their own fit.  ``intercept`` is carried along unpenalised.
    """

    beta: np.ndarray
    precision: np.ndarray
    intercept: Optional[float] = None

    def __post_init__(self) -> None:
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.precision = np.atleast_2d(np.asarray(self.precision, dtype=float))
        p = self.beta.shape[0]
        if self.precision.shape != (p, p):
            raise ValueError("precision must be p x p")
        if not np.allclose(self.precision, self.precision.T, rtol=1e-10, atol=1e-12):
            raise ValueError("precision must be symmetric")
        self.precision = 0.5 * (self.precision + self.precision.T)

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256(self.beta.tobytes())
        h.update(self.precision.tobytes())
        return h.hexdigest()[:16]


def _bernoulli_loglik(eta, y) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _separated(Z: np.ndarray, y: np.ndarray) -> bool:
    """True when some direction w has s_i z_i'w >= 0 for every row and > 0 for
    at least one (s_i = +-1 from y), i.e. the MLE does not exist."""
    A = Z * np.where(y == 1, 1.0, -1.0)[:, None]
    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(len(y)),
                  bounds=[(-1.0, 1.0)] * Z.shape[1], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-8 * max(1.0, np.abs(A).max()))


def fit_logistic_mle(
    data: Dataset,
    fit_intercept: bool = True,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_norm: float = 1e4,
) -> LsaSurrogate:
    """Newton-Raphson logistic MLE and its LSA surrogate.

    With an intercept the surrogate precision is the Schur complement of the
    intercept in the full information matrix, i.e. the information of the
    intercept-profiled likelihood for the slopes.
    """
    y = data.y
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic outcomes must be 0/1")
    X = np.column_stack([np.ones(data.n), data.X]) if fit_intercept else data.X
    if _separated(X, y):
        raise NonConvergenceError("outcomes are (quasi-)separated; the MLE does not exist")
    theta = np.zeros(X.shape[1])
    if fit_intercept:
        ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        theta[0] = np.log(ybar / (1 - ybar))
    eta = X @ theta
    ll = _bernoulli_loglik(eta, y)
    for _ in range(max_iter):
        mu = expit(eta)
        grad = X.T @ (y - mu)
        if np.linalg.norm(grad) < tol:
            break
        H = (X * (mu * (1 - mu))[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise NonConvergenceError("singular information matrix", theta) from None
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new = _bernoulli_loglik(X @ cand, y)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        theta = cand
        eta = X @ theta
        ll = ll_new
        if np.linalg.norm(theta) > max_norm:
            raise NonConvergenceError(
                "coefficients diverging (separation suspected)", theta
            )
    else:
        raise NonConvergenceError(f"Newton-Raphson did not converge in {max_iter} steps", theta)
    mu = expit(eta)
    H = (X * (mu * (1 - mu))[:, None]).T @ X
    if fit_intercept:
        precision = H[1:, 1:] - np.outer(H[1:, 0], H[0, 1:]) / H[0, 0]
        return LsaSurrogate(theta[1:], precision, intercept=float(theta[0]))
    return LsaSurrogate(theta, H)


def fit_linear_lsa(data: Dataset, sigma2: Optional[float] = None) -> LsaSurrogate:
    """Gaussian-regression surrogate: OLS with information X'X / sigma2.

    ``sigma2`` defaults to the residual variance with ``n - p - 1`` degrees
    of freedom (one spent on the centring).
    """
    X, y = data.X, data.y
    G = X.T @ X
    beta = np.linalg.solve(G, X.T @ y)
    if sigma2 is None:
        r = y - X @ beta
        sigma2 = float(r @ r) / max(data.n - data.p - 1, 1)
    return LsaSurrogate(beta, G / sigma2, intercept=data.y_mean)


def lsa_pseudo_data(surrogate: LsaSurrogate) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root ``Xt`` of the precision and ``yt = Xt @ beta``."""
    w, V = np.linalg.eigh(surrogate.precision)
    if w.min() <= 0:
        raise NumericalError("surrogate precision is not positive definite", w.max() / w.min())
    Xt = (V * np.sqrt(w)) @ V.T
    Xt = 0.5 * (Xt + Xt.T)
    return Xt, Xt @ surrogate.beta


def lsa_kernel(surrogate: LsaSurrogate) -> GaussianKernel:
    Q = surrogate.precision
    return GaussianKernel(Q, Q @ surrogate.beta, sample_sigma2=False)


def gibbs_step_lsa(
    state: LinearGibbsState,
    surrogate: LsaSurrogate,
    mode: PenaltyMode,
    rng: RngHandle,
    freeze: Iterable[str] = (),
) -> LinearGibbsState:
    """One sweep of beta, 1/tau2 and lambda2 under the LSA likelihood."""
    s = state.copy()
    s.sigma2 = 1.0
    return lsa_kernel(surrogate).step(s, mode, rng, freeze)


def run_chain_lsa(
    surrogate: LsaSurrogate,
    mode: PenaltyMode = PenaltyMode(),
    cfg: ChainConfig = ChainConfig(),
    *,
    init: Optional[LinearGibbsState] = None,
    freeze: Iterable[str] = (),
) -> ChainStore:
    return run_chain(
        lsa_kernel(surrogate), mode, cfg, data_id=surrogate.fingerprint(),
        likelihood="lsa", init=init, freeze=freeze,
    )


# -- group and CAP samplers ---------------------------------------------------


def _csr(lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    idx = np.array([i for x in lists for i in x], dtype=np.int64)
    return ptr, idx


@dataclass
class CapStructure:
    """Ancestry relation among groups: ``(j, k)`` means j -> k, i.e. group k may
    enter the model only if group j is in it."""

    sizes: Sequence[int]
    relation: Sequence[tuple[int, int]] = ()

    def __post_init__(self) -> None:
        self.sizes = np.asarray(self.sizes, dtype=int)
        J = self.sizes.shape[0]
        self.relation = [(int(a), int(b)) for a, b in self.relation]
        for a, b in self.relation:
            if not (0 <= a < J and 0 <= b < J) or a == b:
                raise ValueError(f"invalid relation pair {(a, b)} for {J} groups")
        ts = TopologicalSorter({j: [] for j in range(J)})
        for a, b in self.relation:
            ts.add(b, a)
        try:
            tuple(ts.static_order())
        except CycleError as exc:
            raise ValueError(f"ancestry relation has a cycle: {exc.args[1]}") from None

    @property
    def J(self) -> int:
        return self.sizes.shape[0]

    def descendants(self, j: int) -> list[int]:
        return sorted({b for a, b in self.relation if a == j})

    def ancestors(self, j: int) -> list[int]:
        return sorted({a for a, b in self.relation if b == j})

    @property
    def k(self) -> np.ndarray:
        """Effective sizes m_j + sum of sizes of the groups j points to."""
        return np.array(
            [self.sizes[j] + sum(self.sizes[d] for d in self.descendants(j)) for j in range(self.J)]
        )

    def group_variance(self, tau2) -> np.ndarray:
        """Prior variance of each group: (1/tau2_j + sum_{j' -> j} 1/tau2_j')^-1."""
        tau2 = np.asarray(tau2, dtype=float)
        return np.array(
            [1.0 / (1.0 / tau2[j] + sum(1.0 / tau2[a] for a in self.ancestors(j)))
             for j in range(self.J)]
        )


@dataclass
class GroupGibbsState(LinearGibbsState):
    sizes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def copy(self) -> "GroupGibbsState":
        return GroupGibbsState(
            self.beta.copy(), self.sigma2, self.tau2.copy(), self.lambda2.copy(),
            self.delta, self.sizes,
        )


class GroupKernel:
    """Sweep over groups (beta_j | rest), then 1/tau2_j, then lambda2_j."""

    def __init__(self, surrogate: LsaSurrogate, groups: Sequence[Sequence[int]],
                 structure: Optional[CapStructure] = None):
        self.surrogate = surrogate
        self.Q = np.ascontiguousarray(surrogate.precision)
        self.c = self.Q @ surrogate.beta
        self.groups = [list(map(int, g)) for g in groups]
        cols = sorted(c for g in self.groups for c in g)
        if cols != list(range(surrogate.p)):
            raise ValueError("groups must partition the surrogate's coefficients")
        sizes = [len(g) for g in self.groups]
        self.structure = structure if structure is not None else CapStructure(sizes)
        if list(self.structure.sizes) != sizes:
            raise ValueError("CAP structure sizes disagree with the groups")
        self.p = surrogate.p
        self.J = len(self.groups)
        self.k = self.structure.k.astype(float)
        self._starts, self._cols = _csr(self.groups)
        self._anc = _csr([self.structure.ancestors(j) for j in range(self.J)])
        self._desc = _csr([self.structure.descendants(j) for j in range(self.J)])

    def initial_state(self, mode: PenaltyMode) -> GroupGibbsState:
        beta = np.linalg.solve(self.Q + np.eye(self.p), self.c)
        lam2 = np.ones(self.J) if mode.lambda2 is None else np.broadcast_to(
            np.asarray(mode.lambda2, float), (self.J,)
        ).copy()
        return GroupGibbsState(
            beta, 1.0, np.ones(self.J), lam2, mode.delta or 1.0,
            np.array([len(g) for g in self.groups]),
        )

    def lambda_shape(self, r: float) -> np.ndarray:
        return r + 0.5 * (self.k + 1.0)

    def expected_lambda2(self, state, r: float) -> np.ndarray:
        return self.lambda_shape(r) / (state.delta + 0.5 * state.tau2)

    def em_update(self, tau2_mean: np.ndarray, q: int) -> np.ndarray:
        return (self.k + 1.0) / tau2_mean

    def sa_score(self, lambda2: np.ndarray, tau2: np.ndarray) -> np.ndarray:
        return (self.k + 1.0) - lambda2 * tau2

    def step(self, state, mode: PenaltyMode, rng: RngHandle, freeze: Iterable[str] = ()):
        rule = (
            _sweeps.LAMBDA_PER_UNIT
            if mode.kind == "hierarchical" and "lambda2" not in freeze
            else _sweeps.LAMBDA_HELD
        )
        ok = _sweeps.group_sweep(
            rng.generator, self.Q, self.c, state.beta, state.tau2, state.lambda2,
            state.delta, self.lambda_shape(mode.r), self._starts, self._cols,
            self._anc[0], self._anc[1], self._desc[0], self._desc[1],
            "beta" not in freeze, "tau2" not in freeze, rule, BETA_FLOOR,
        )
        if not ok:
            raise NumericalError("Cholesky of a group precision block failed")
        return state


def _group_step(state, surrogate, groups, structure, mode, rng, freeze):
    if groups is None:
        groups = _groups_from_sizes(state.sizes)
    kernel = GroupKernel(surrogate, groups, structure)
    return kernel.step(state.copy(), mode, rng, freeze)


def _groups_from_sizes(sizes) -> list[list[int]]:
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [list(range(edges[j], edges[j + 1])) for j in range(len(sizes))]


def gibbs_step_group(
    state: GroupGibbsState,
    surrogate: LsaSurrogate,
    rng: RngHandle,
    mode: PenaltyMode = PenaltyMode(),
    groups: Optional[Sequence[Sequence[int]]] = None,
    freeze: Iterable[str] = (),
) -> GroupGibbsState:
    """One group-lasso sweep.  Without ``groups`` the coefficients are taken
    to be laid out contiguously with sizes ``state.sizes``."""
    return _group_step(state, surrogate, groups, None, mode, rng, freeze)


def gibbs_step_cap(
    state: GroupGibbsState,
    structure: CapStructure,
    surrogate: LsaSurrogate,
    rng: RngHandle,
    mode: PenaltyMode = PenaltyMode(),
    groups: Optional[Sequence[Sequence[int]]] = None,
    freeze: Iterable[str] = (),
) -> GroupGibbsState:
    return _group_step(state, surrogate, groups, structure, mode, rng, freeze)


def run_chain_group(
    surrogate: LsaSurrogate,
    groups: Sequence[Sequence[int]],
    mode: PenaltyMode = PenaltyMode(),
    cfg: ChainConfig = ChainConfig(),
    *,
    structure: Optional[CapStructure] = None,
    init: Optional[GroupGibbsState] = None,
    freeze: Iterable[str] = (),
) -> ChainStore:
    """Group (or, with ``structure``, CAP) BaLasso chain on an LSA surrogate."""
    if mode.shared:
        raise ValueError("group samplers keep one smoothing parameter per group")
    kernel = GroupKernel(surrogate, groups, structure)
    extra = {
        "groups": kernel.groups,
        "ancestry": [list(e) for e in kernel.structure.relation],
    }
    return run_chain(
        kernel, mode, cfg, data_id=surrogate.fingerprint(),
        likelihood="cap" if structure is not None and structure.relation else "group",
        init=init, freeze=freeze, extra_meta=extra,
    )
