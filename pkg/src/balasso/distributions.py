"""Random variates for the Gibbs full conditionals.

Gamma variates use the rate parameterisation everywhere in this package:
``sample_gamma(shape, rate)`` has density proportional to
``x**(shape - 1) * exp(-rate * x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg

__all__ = [
    "ParameterError",
    "NumericalError",
    "RngHandle",
    "InverseGaussianParams",
    "sample_inverse_gaussian",
    "sample_gamma",
    "sample_inverse_gamma",
    "sample_mvn",
]


class ParameterError(ValueError):
    """A distribution parameter is outside its domain."""


class NumericalError(ArithmeticError):
    """A factorisation failed; ``condition`` carries the 2-norm condition number."""

    def __init__(self, message: str, condition: float = float("nan")):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


@dataclass
class RngHandle:
    """Seeded, single-owner random stream.

    Distinct ``stream`` values under one ``seed`` give statistically
    independent PCG64 streams (via ``SeedSequence.spawn_key``), so every chain
    or replication can own its own generator.
    """

    seed: int
    stream: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream < 0:
            raise ParameterError("seed and stream must be non-negative")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngHandle":
        """Independent handle for sub-task ``stream`` of this handle."""
        return RngHandle(self.seed, self.stream * 1_000_003 + stream + 1)


def _gen(rng: RngHandle | np.random.Generator) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngHandle) else rng


@dataclass(frozen=True)
class InverseGaussianParams:
    mean: float
    shape: float

    def __post_init__(self) -> None:
        if not (self.mean > 0 and self.shape > 0):
            raise ParameterError(
                f"inverse-Gaussian needs mean > 0 and shape > 0, got {self.mean}, {self.shape}"
            )


@njit(cache=True)
def ig_transform(mu, lam, nu, u):
    """Map a standard normal ``nu`` and uniform ``u`` to an IG(mu, lam) draw."""
    a = mu * nu * nu / (2.0 * lam)
    x = mu / (1.0 + a + np.sqrt(a * (a + 2.0)))
    if u * (mu + x) <= mu:
        return x
    return mu * mu / x


@njit(cache=True)
def _ig_transform_array(mu, lam, nu, u):
    out = np.empty(mu.shape[0])
    for i in range(mu.shape[0]):
        out[i] = ig_transform(mu[i], lam[i], nu[i], u[i])
    return out


def sample_inverse_gaussian(mean, shape, rng, size=None):
    """Michael-Schucany-Haas transform sampler.

    ``mean`` and ``shape`` broadcast; an ``InverseGaussianParams`` may be
    passed as ``mean`` with ``shape=None``.  The smaller root of the quadratic
    is computed as ``mean / (1 + a + sqrt(a**2 + 2a))`` which stays accurate
    when ``mean`` is huge (coefficients near zero).
    """
    if isinstance(mean, InverseGaussianParams):
        mean, shape = mean.mean, mean.shape
    mu = np.asarray(mean, dtype=float)
    lam = np.asarray(shape, dtype=float)
    if not (np.all(mu > 0) and np.all(lam > 0)):
        raise ParameterError("inverse-Gaussian needs mean > 0 and shape > 0")
    g = _gen(rng)
    if size is None:
        size = np.broadcast(mu, lam).shape
    nu = g.standard_normal(size)
    u = g.random(size)
    mu_b, lam_b = (np.broadcast_to(v, np.shape(nu)).ravel() for v in (mu, lam))
    out = _ig_transform_array(
        np.ascontiguousarray(mu_b), np.ascontiguousarray(lam_b), np.ravel(nu), np.ravel(u)
    ).reshape(np.shape(nu))
    return out if out.ndim else float(out)


def sample_gamma(shape, rate, rng, size=None):
    """Gamma(shape, rate) draws; ``rate`` is the inverse scale."""
    a = np.asarray(shape, dtype=float)
    b = np.asarray(rate, dtype=float)
    if not (np.all(a > 0) and np.all(b > 0)):
        raise ParameterError("gamma needs shape > 0 and rate > 0")
    out = _gen(rng).gamma(a, 1.0 / b, size)
    return out if np.ndim(out) else float(out)


def sample_inverse_gamma(shape, scale, rng):
    """Inverse-gamma with density proportional to x**(-shape-1) exp(-scale/x)."""
    return 1.0 / sample_gamma(shape, scale, rng)


def _condition(matrix: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(matrix))
    except np.linalg.LinAlgError:
        return float("inf")


def cholesky_lower(matrix: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NumericalError("Cholesky factorisation failed", _condition(matrix)) from None


def sample_mvn(mean, precision, rng, *, chol: np.ndarray | None = None) -> np.ndarray:
    """Draw from N(mean, precision^{-1}) without forming the inverse.

    With ``precision = L L'`` the draw is ``mean + L'^{-1} z``.  A
    precomputed lower factor may be passed as ``chol``.
    """
    m = np.asarray(mean, dtype=float)
    L = cholesky_lower(np.asarray(precision, dtype=float)) if chol is None else chol
    z = _gen(rng).standard_normal(m.shape[0])
    return m + linalg.solve_triangular(L, z, lower=True, trans="T", check_finite=False)
