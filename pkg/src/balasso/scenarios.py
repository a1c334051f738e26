"""Simulation designs for the adaptive-shrinkage demo and Examples 1-4, 7-9."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .distributions import RngHandle
from .general import CapStructure
from .inference import SparsityPattern

__all__ = [
    "SCENARIOS",
    "ScenarioSpec",
    "Replicate",
    "ar1_correlation",
    "example2_correlation",
    "generate_dataset",
]

# scenario -> (n, sigma, n_test)
_DEFAULTS = {
    "fig2": (50, 1.0, 0),
    "ex1": (120, 1.0, 0),
    "ex2": (300, 1.0, 0),
    "ex3": (100, 1.0, 0),
    "ex4-small": (200, 1.0, 200),
    "ex4-large": (200, 3.0, 200),
    "ex7": (500, 1.0, 0),
    "ex8": (500, 1.0, 0),
    "ex9": (200, 1.0, 0),
}
SCENARIOS = tuple(_DEFAULTS)


@dataclass(frozen=True)
class ScenarioSpec:
    """``n``/``sigma``/``n_test`` default per scenario when left as ``None``.

    ``sigma`` is ignored for the logistic design (ex7).
    """

    scenario: str
    n: Optional[int] = None
    sigma: Optional[float] = None
    reps: int = 100
    seed: int = 0
    n_test: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scenario not in _DEFAULTS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        n0, s0, t0 = _DEFAULTS[self.scenario]
        if self.n is None:
            object.__setattr__(self, "n", n0)
        if self.sigma is None:
            object.__setattr__(self, "sigma", s0)
        if self.n_test is None:
            object.__setattr__(self, "n_test", t0)
        if self.n < 3 or self.reps < 1 or self.sigma <= 0 or self.n_test < 0:
            raise ValueError(f"invalid scenario settings {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Replicate:
    """One simulated data set (raw, uncentred) plus its ground truth."""

    train: Dataset
    beta: np.ndarray
    truth: SparsityPattern
    likelihood: str = "linear"
    test: Optional[Dataset] = None
    groups: Optional[list[list[int]]] = None
    structure: Optional[CapStructure] = None
    intercept: float = 0.0
    info: dict = field(default_factory=dict)


def ar1_correlation(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def example2_correlation() -> np.ndarray:
    """cor(x_j, x_k) = -0.39 among the first three, 0.23 with the fourth."""
    R = np.full((4, 4), -0.39)
    R[3, :] = R[:, 3] = 0.23
    np.fill_diagonal(R, 1.0)
    return R


def _check_spd(R: np.ndarray, name: str) -> np.ndarray:
    w = np.linalg.eigvalsh(R)
    if w.min() <= 0:
        raise ValueError(f"{name} correlation matrix is not positive definite:\n{R}\neigenvalues {w}")
    return np.linalg.cholesky(R)


_EX2_CHOL = _check_spd(example2_correlation(), "Example 2")


def _gaussian_design(g: np.random.Generator, n: int, R: np.ndarray, L=None) -> np.ndarray:
    L = np.linalg.cholesky(R) if L is None else L
    return g.standard_normal((n, R.shape[0])) @ L.T


_CUTS = norm.ppf([1.0 / 3.0, 2.0 / 3.0])


def _factors(g: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Tertile-cut AR(0.5) latent Gaussians: integer levels 0, 1, 2."""
    Z = _gaussian_design(g, n, ar1_correlation(k))
    return np.searchsorted(_CUTS, Z).astype(int)


def _dummies(levels: np.ndarray) -> np.ndarray:
    """Two indicator columns per factor (levels 1 and 2; level 0 is the reference)."""
    n, k = levels.shape
    D = np.empty((n, 2 * k))
    D[:, 0::2] = levels == 1
    D[:, 1::2] = levels == 2
    return D


def _contiguous_groups(sizes) -> list[list[int]]:
    edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [list(range(edges[j], edges[j + 1])) for j in range(len(sizes))]


def _linear(spec, g, X_fn, beta, **extra) -> Replicate:
    n_all = spec.n + spec.n_test
    X = X_fn(n_all)
    y = X @ beta + spec.sigma * g.standard_normal(n_all)
    train = Dataset(y[: spec.n], X[: spec.n], groups=extra.get("groups"))
    test = Dataset(y[spec.n:], X[spec.n:]) if spec.n_test else None
    groups = extra.pop("groups", None)
    if groups is None:
        truth = SparsityPattern.from_beta(beta)
    else:
        truth = SparsityPattern(tuple(bool(np.any(beta[gr] != 0)) for gr in groups))
    return Replicate(train, beta, truth, test=test, groups=groups, **extra)


def generate_dataset(spec: ScenarioSpec, rep: int, rng: Optional[RngHandle] = None) -> Replicate:
    """Draw replication ``rep`` of ``spec``.

    Without ``rng`` the stream is derived from ``(spec.seed, rep)`` so any
    replication can be regenerated on its own.
    """
    if rng is None:
        rng = RngHandle(spec.seed, rep).child(0)
    g = rng.generator
    s = spec.scenario

    if s == "fig2":
        beta = np.array([3.0, 0.0])
        return _linear(spec, g, lambda m: g.standard_normal((m, 2)), beta)
    if s in ("ex1", "ex4-small"):
        beta = np.array([3, 1.5, 0, 0, 2, 0, 0, 0], float)
        if s == "ex4-small":
            beta[2:4] = 0.1
        R = ar1_correlation(8)
        return _linear(spec, g, lambda m: _gaussian_design(g, m, R), beta)
    if s == "ex2":
        beta = np.array([5.6, 5.6, 5.6, 0.0])
        R = example2_correlation()
        return _linear(spec, g, lambda m: _gaussian_design(g, m, R, _EX2_CHOL), beta)
    if s in ("ex3", "ex4-large"):
        beta = np.zeros(100)
        if s == "ex3":
            beta[9::10] = 5.0
        else:
            beta[9:50:10] = 0.5
        R = ar1_correlation(100)
        L = np.linalg.cholesky(R)
        return _linear(spec, g, lambda m: _gaussian_design(g, m, R, L), beta)
    if s == "ex7":
        beta = np.array([3, 1.5, 0, 0, 2, 0, 0, 0], float)
        intercept = 5.0
        X = _gaussian_design(g, spec.n, ar1_correlation(8))
        eta = intercept + X @ beta
        y = (g.random(spec.n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        return Replicate(
            Dataset(y, X), beta, SparsityPattern.from_beta(beta),
            likelihood="logistic", intercept=intercept,
        )
    if s == "ex8":
        beta = np.zeros(30)
        beta[0:2] = (-1.2, 1.8)
        beta[4:6] = (1.0, 0.5)
        beta[8:10] = (1.0, 1.0)
        groups = _contiguous_groups([2] * 15)
        return _linear(spec, g, lambda m: _dummies(_factors(g, m, 15)), beta, groups=groups)
    if s == "ex9":
        pairs = list(combinations(range(4), 2))
        sizes = [2] * 4 + [4] * len(pairs)
        groups = _contiguous_groups(sizes)
        relation = [(a, 4 + k) for k, pr in enumerate(pairs) for a in pr]

        def design(m):
            D = _dummies(_factors(g, m, 4))
            cols = [D]
            for a, b in pairs:
                Da, Db = D[:, 2 * a: 2 * a + 2], D[:, 2 * b: 2 * b + 2]
                cols.append((Da[:, :, None] * Db[:, None, :]).reshape(m, 4))
            return np.hstack(cols)

        beta = np.zeros(sum(sizes))
        beta[0:2] = (3.0, 2.0)
        beta[2:4] = (3.0, 2.0)
        beta[groups[4]] = (1.0, 1.5, 2.0, 2.5)  # interaction of factors 1 and 2
        return _linear(
            spec, g, design, beta, groups=groups,
            structure=CapStructure(sizes, relation),
        )
    raise AssertionError(s)
