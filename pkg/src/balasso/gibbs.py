"""Gibbs sampler for the Bayesian adaptive Lasso in Gaussian regression.

Hierarchy (per coefficient j)::

    y | b, s2        ~ N(X b, s2 I)
    b_j | s2, t2_j   ~ N(0, s2 t2_j)
    t2_j | l2_j      ~ Exp(rate l2_j / 2)
    l2_j             ~ Gamma(r, rate delta)        (hierarchical mode)
    p(s2)            ~ 1 / s2

The same kernel drives the least-squares-approximation (LSA) sampler in
:mod:`balasso.general`: there the Gaussian "likelihood" is
``exp(-(b - b0)'Q(b - b0)/2)`` and ``s2`` is pinned at 1.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from . import _sweeps
from .data import Dataset
from .distributions import NumericalError, RngHandle

__all__ = [
    "BETA_FLOOR",
    "PenaltyMode",
    "ChainConfig",
    "LinearGibbsState",
    "ChainStore",
    "GaussianKernel",
    "gibbs_step_linear",
    "run_chain_linear",
    "run_chain",
    "config_hash",
]

BETA_FLOOR = 1e-10
KINDS = ("fixed", "hierarchical", "eb-em", "eb-sa")


@dataclass(frozen=True)
class PenaltyMode:
    """Which smoothing-parameter regime drives the chain.

    ``delta=None`` means delta is estimated during burn-in by Monte-Carlo EM
    (``delta <- q r / sum_j E[l2_j]``, refreshed every ``delta_block``
    sweeps).  ``lambda2`` is the initial value for hierarchical/eb modes and
    the held value for ``fixed``.  ``shared=True`` ties all coefficients to a
    single smoothing parameter (the original Bayesian Lasso).
    The stochastic-approximation step is ``a_n = sa_step / n``.
    """

    kind: str = "hierarchical"
    r: float = 0.1
    delta: Optional[float] = None
    lambda2: Optional[object] = None
    shared: bool = False
    delta_block: int = 500
    em_outer_steps: int = 20
    em_inner_burnin: int = 2000
    em_inner_draws: int = 2000
    em_tol: float = 1e-2
    sa_step: float = 1.0
    sa_truncate: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.sa_step > 0:
            raise ValueError("sa_step must be positive")
        if self.kind == "fixed" and self.lambda2 is None:
            raise ValueError("fixed mode needs lambda2")

    def step_size(self, n: int) -> float:
        return self.sa_step / n

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["lambda2"] is not None:
            d["lambda2"] = np.atleast_1d(np.asarray(d["lambda2"], float)).tolist()
        return d


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 10_000
    kept: int = 10_000
    thin: int = 1
    seed: int = 0
    stream: int = 0

    def __post_init__(self) -> None:
        if self.burn_in < 0 or self.kept < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, kept >= 1, thin >= 1")

    def rng(self) -> RngHandle:
        return RngHandle(self.seed, self.stream)


@dataclass
class LinearGibbsState:
    beta: np.ndarray
    sigma2: float
    tau2: np.ndarray
    lambda2: np.ndarray
    delta: float = 1.0

    def check(self) -> None:
        if not (self.sigma2 > 0 and np.all(self.tau2 > 0) and np.all(self.lambda2 > 0)):
            raise FloatingPointError(f"state left the support: {self}")

    def copy(self) -> "LinearGibbsState":
        return LinearGibbsState(
            self.beta.copy(), self.sigma2, self.tau2.copy(), self.lambda2.copy(), self.delta
        )


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ChainStore:
    """Post-burn-in draws.  ``tau2``/``lambda2`` have one column per penalty
    unit (coefficient, or group for group samplers)."""

    beta: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    lambda2: np.ndarray
    meta: dict = field(default_factory=dict)
    count: int = -1

    def __post_init__(self) -> None:
        if self.count < 0:
            self.count = self.beta.shape[0]

    @classmethod
    def allocate(cls, kept: int, p: int, q: int, meta: dict, q_lambda: Optional[int] = None) -> "ChainStore":
        """``q`` tau2 columns and ``q_lambda`` (default ``q``) lambda2 columns."""
        q_lambda = q if q_lambda is None else q_lambda
        return cls(
            np.empty((kept, p)), np.empty(kept), np.empty((kept, q)), np.empty((kept, q_lambda)),
            meta, count=0,
        )

    def append(self, beta, sigma2, tau2, lambda2) -> None:
        i = self.count
        if i >= self.beta.shape[0]:
            raise IndexError("chain store is full")
        self.beta[i] = beta
        self.sigma2[i] = sigma2
        self.tau2[i] = tau2
        self.lambda2[i] = lambda2
        self.count = i + 1

    def __len__(self) -> int:
        return self.count

    @property
    def lambdas(self) -> np.ndarray:
        return np.sqrt(self.lambda2[: self.count])

    @property
    def eb_lambda(self) -> Optional[np.ndarray]:
        v = self.meta.get("eb_lambda")
        return None if v is None else np.asarray(v, dtype=float)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.beta, self.sigma2, self.tau2, self.lambda2):
            h.update(np.ascontiguousarray(a[: self.count]).tobytes())
        h.update(json.dumps(self.meta, sort_keys=True, default=str).encode())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChainStore) or len(self) != len(other):
            return False
        k = self.count
        return (
            all(
                np.array_equal(a[:k], b[:k])
                for a, b in (
                    (self.beta, other.beta),
                    (self.sigma2, other.sigma2),
                    (self.tau2, other.tau2),
                    (self.lambda2, other.lambda2),
                )
            )
            and self.meta == other.meta
        )


class GaussianKernel:
    """One sweep of the coefficient-level sampler.

    The likelihood enters only through ``G`` (X'X or Q), ``c`` (X'y or Q b0),
    ``yty`` and ``n``; with ``sample_sigma2=False`` the error variance stays
    at its current value (1 for LSA).
    """

    def __init__(self, G, c, yty: float = 0.0, n: int = 0, sample_sigma2: bool = True):
        self.G = np.ascontiguousarray(G, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.yty = float(yty)
        self.n = int(n)
        self.sample_sigma2 = sample_sigma2
        self.p = self.c.shape[0]
        self._diag = np.diag_indices(self.p)

    @classmethod
    def from_data(cls, data: Dataset) -> "GaussianKernel":
        X, y = data.X, data.y
        return cls(X.T @ X, X.T @ y, float(y @ y), data.n)

    def initial_state(self, mode: PenaltyMode) -> LinearGibbsState:
        p = self.p
        beta = np.linalg.solve(self.G + np.eye(p), self.c)
        if self.sample_sigma2:
            rss = self.yty - 2 * self.c @ beta + beta @ self.G @ beta
            sigma2 = max(rss / max(self.n - 1, 1), 1e-8)
        else:
            sigma2 = 1.0
        q = 1 if mode.shared else p
        lam2 = np.ones(q) if mode.lambda2 is None else np.broadcast_to(
            np.asarray(mode.lambda2, float), (q,)
        ).copy()
        return LinearGibbsState(beta, float(sigma2), np.ones(p), lam2, mode.delta or 1.0)

    def lambda_shape(self, state: LinearGibbsState, r: float) -> np.ndarray:
        if state.lambda2.shape[0] == 1 and self.p > 1:
            return np.array([r + self.p])
        return np.full(self.p, r + 1.0)

    def expected_lambda2(self, state: LinearGibbsState, r: float) -> np.ndarray:
        """Rao-Blackwellised E[lambda2 | tau2] under the gamma full conditional."""
        shape = self.lambda_shape(state, r)
        if shape.shape[0] == 1 and self.p > 1:
            return shape / (state.delta + 0.5 * state.tau2.sum())
        return shape / (state.delta + 0.5 * state.tau2)

    def em_update(self, tau2_mean: np.ndarray, q: int) -> np.ndarray:
        """Marginal-likelihood EM step for lambda2 given E[tau2 | y]."""
        if q == 1 and self.p > 1:
            return np.array([2.0 * self.p / tau2_mean.sum()])
        return 2.0 / tau2_mean

    def sa_score(self, lambda2: np.ndarray, tau2: np.ndarray) -> np.ndarray:
        """d/ds log p(tau2 | lambda = e^s), the stochastic-approximation drift."""
        if lambda2.shape[0] == 1 and self.p > 1:
            return np.array([2.0 * self.p - lambda2[0] * tau2.sum()])
        return 2.0 - lambda2 * tau2

    def step(
        self,
        state: LinearGibbsState,
        mode: PenaltyMode,
        rng: RngHandle,
        freeze: Iterable[str] = (),
    ) -> LinearGibbsState:
        """One sweep, updating ``state`` in place and returning it."""
        shared = state.lambda2.shape[0] == 1 and self.p > 1
        if mode.kind == "hierarchical" and "lambda2" not in freeze:
            rule = _sweeps.LAMBDA_SHARED if shared else _sweeps.LAMBDA_PER_UNIT
        else:
            rule = _sweeps.LAMBDA_HELD
        sigma2, ok = _sweeps.coefficient_sweep(
            rng.generator, self.G, self.c, self.yty, self.n,
            state.beta, state.tau2, state.lambda2, state.sigma2, state.delta,
            self.lambda_shape(state, mode.r),
            self.sample_sigma2 and "sigma2" not in freeze,
            "beta" not in freeze, "tau2" not in freeze, rule, BETA_FLOOR,
        )
        if not ok:
            A = self.G + np.diag(1.0 / state.tau2)
            raise NumericalError(
                "Cholesky of X'X + D_tau^-1 failed", float(np.linalg.cond(A))
            )
        state.sigma2 = float(sigma2)
        return state


def gibbs_step_linear(
    state: LinearGibbsState,
    data: Dataset,
    mode: PenaltyMode,
    rng: RngHandle,
    freeze: Iterable[str] = (),
) -> LinearGibbsState:
    """One full sweep: beta (block), sigma2, 1/tau2_j, then lambda2 if hierarchical.

    The input state is left untouched.
    """
    return GaussianKernel.from_data(data).step(state.copy(), mode, rng, freeze)


def _sample_path(
    kernel,
    state,
    mode: PenaltyMode,
    cfg: ChainConfig,
    rng: RngHandle,
    store: ChainStore,
    freeze: Iterable[str] = (),
):
    """Burn-in plus kept draws shared by every sampler in the package.

    ``kernel.step`` performs one sweep; this loop layers on delta estimation
    and the stochastic-approximation update of ``s = log(lambda)``.
    """
    freeze = tuple(freeze)
    estimate_delta = mode.kind == "hierarchical" and mode.delta is None
    sa = mode.kind == "eb-sa"
    if sa:
        s0 = 0.5 * np.log(state.lambda2)
        s = s0.copy()
        n_resets = 0
        sa_n = 0
    acc = np.zeros_like(state.lambda2)
    acc_n = 0
    total = cfg.burn_in + cfg.kept * cfg.thin
    for it in range(1, total + 1):
        state = kernel.step(state, mode, rng, freeze)
        if sa:
            sa_n += 1
            a_n = mode.step_size(sa_n)
            s = s + a_n * kernel.sa_score(np.exp(2.0 * s), state.tau2)
            if mode.sa_truncate:
                if np.any(np.abs(s) > n_resets + 1):
                    s = s0.copy()
                    n_resets += 1
                    sa_n = 0
            else:
                s = np.clip(s, -50.0, 50.0)
            state.lambda2 = np.exp(2.0 * s)
        if estimate_delta and it <= cfg.burn_in:
            acc += kernel.expected_lambda2(state, mode.r)
            acc_n += 1
            if acc_n == mode.delta_block or it == cfg.burn_in:
                state.delta = float(mode.r * acc.shape[0] / np.sum(acc / acc_n))
                acc[:] = 0.0
                acc_n = 0
        state.check()
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            store.append(state.beta, state.sigma2, state.tau2, state.lambda2)
    store.meta["delta"] = float(state.delta)
    if sa:
        store.meta["eb_lambda"] = np.exp(s).tolist()
        store.meta["sa_resets"] = n_resets
    return state


def _provenance(kind: str, data_id: str, mode: PenaltyMode, cfg: ChainConfig, extra=None) -> dict:
    config = {
        "likelihood": kind,
        "data": data_id,
        "mode": mode.to_dict(),
        "chain": asdict(cfg),
    }
    if extra:
        config.update(extra)
    return {
        "likelihood": kind,
        "mode": mode.kind,
        "seed": cfg.seed,
        "stream": cfg.stream,
        "config": config,
        "config_hash": config_hash(config),
    }


def run_chain(
    kernel: GaussianKernel,
    mode: PenaltyMode,
    cfg: ChainConfig,
    *,
    data_id: str = "",
    likelihood: str = "linear",
    init: Optional[LinearGibbsState] = None,
    freeze: Iterable[str] = (),
    extra_meta: Optional[dict] = None,
) -> ChainStore:
    """Run a chain on any kernel exposing ``initial_state``/``step``/``p``."""
    rng = cfg.rng()
    if mode.kind == "eb-em":
        return _run_em(kernel, mode, cfg, rng, data_id, likelihood, init, freeze, extra_meta)
    state = init.copy() if init is not None else kernel.initial_state(mode)
    if mode.kind == "hierarchical" and mode.delta is not None:
        state.delta = mode.delta
    meta = _provenance(likelihood, data_id, mode, cfg, extra_meta)
    store = ChainStore.allocate(
        cfg.kept, kernel.p, state.tau2.shape[0], meta, state.lambda2.shape[0]
    )
    _sample_path(kernel, state, mode, cfg, rng, store, freeze)
    return store


def _run_em(kernel, mode, cfg, rng, data_id, likelihood, init, freeze, extra_meta) -> ChainStore:
    """Monte-Carlo EM: lambda_j <- sqrt(2 / E[tau2_j]) from short fixed-lambda chains."""
    state = init.copy() if init is not None else kernel.initial_state(mode)
    lam2 = state.lambda2.copy()
    inner = ChainConfig(mode.em_inner_burnin, mode.em_inner_draws, 1, cfg.seed, cfg.stream)
    history = []
    for k in range(mode.em_outer_steps):
        fixed = replace(mode, kind="fixed", lambda2=lam2)
        store = ChainStore.allocate(inner.kept, kernel.p, state.tau2.shape[0], {}, lam2.shape[0])
        state.lambda2 = lam2.copy()
        state = _sample_path(kernel, state, fixed, inner, rng, store, freeze)
        new = kernel.em_update(store.tau2.mean(axis=0), lam2.shape[0])
        change = np.max(np.abs(np.sqrt(new) - np.sqrt(lam2)) / np.sqrt(lam2))
        lam2 = new
        history.append(np.sqrt(lam2).tolist())
        if change < mode.em_tol:
            break
    fixed = replace(mode, kind="fixed", lambda2=lam2)
    state.lambda2 = lam2.copy()
    meta = _provenance(likelihood, data_id, mode, cfg, extra_meta)
    store = ChainStore.allocate(cfg.kept, kernel.p, state.tau2.shape[0], meta, lam2.shape[0])
    _sample_path(kernel, state, fixed, cfg, rng, store, freeze)
    store.meta["eb_lambda"] = np.sqrt(lam2).tolist()
    store.meta["em_history"] = history
    return store


def run_chain_linear(
    data: Dataset,
    mode: PenaltyMode = PenaltyMode(),
    cfg: ChainConfig = ChainConfig(),
    *,
    init: Optional[LinearGibbsState] = None,
    freeze: Iterable[str] = (),
) -> ChainStore:
    """Burn in, thin and record a BaLasso chain for centred linear data."""
    kernel = GaussianKernel.from_data(data)
    return run_chain(
        kernel, mode, cfg, data_id=data.fingerprint(), likelihood="linear",
        init=init, freeze=freeze,
    )
