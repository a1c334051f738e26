"""Selection, posterior model probabilities and model-averaged prediction.

Every strategy goes through the conditional posterior mode at a given
smoothing vector ``lam``:

* Gaussian data: ``argmin (y - Xb)'(y - Xb) + sum_j lam_j |b_j|``
* LSA surrogate: ``argmin 0.5 (b - b0)'Q(b - b0) + sum_j lam_j |b_j|``

Draws of ``lambda2`` are summarised on the ``lambda`` scale (square roots).
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .data import Dataset
from .general import CapStructure, LsaSurrogate, lsa_pseudo_data
from .gibbs import ChainStore
from .solvers import (
    GroupL1Problem,
    SolverConfig,
    solve_gram,
    solve_gram_many,
    solve_group_lasso,
)

__all__ = [
    "SparsityPattern",
    "SelectionResult",
    "summarize_lambda",
    "conditional_modes",
    "select_point",
    "select_freq",
    "select_group",
    "estimate_pmp",
    "predict_bma",
    "pattern_predictions",
    "compute_pse",
    "write_selection_csv",
    "write_pmp_csv",
]

Target = Union[Dataset, LsaSurrogate]
STATISTICS = ("mean", "median", "eb-point")


@dataclass(frozen=True)
class SparsityPattern:
    """Inclusion indicators over coefficients (or groups); hashable."""

    bits: tuple[bool, ...]

    @classmethod
    def from_beta(cls, beta) -> "SparsityPattern":
        return cls(tuple(bool(b != 0.0) for b in np.asarray(beta).ravel()))

    @classmethod
    def from_indices(cls, indices, size: int) -> "SparsityPattern":
        idx = set(int(i) for i in indices)
        return cls(tuple(i in idx for i in range(size)))

    @classmethod
    def from_string(cls, s: str) -> "SparsityPattern":
        if set(s) - {"0", "1"}:
            raise ValueError(f"pattern strings are 0/1, got {s!r}")
        return cls(tuple(ch == "1" for ch in s))

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @property
    def indices(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]

    @property
    def size(self) -> int:
        return sum(self.bits)

    @property
    def n_excluded(self) -> int:
        return len(self.bits) - self.size

    def mask(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)


@dataclass
class SelectionResult:
    pattern: SparsityPattern
    beta: np.ndarray
    strategy: str
    lam: Optional[np.ndarray] = None
    frequencies: Optional[np.ndarray] = None
    level: str = "coefficient"

    def __post_init__(self) -> None:
        if self.level == "coefficient" and SparsityPattern.from_beta(self.beta) != self.pattern:
            raise ValueError("pattern disagrees with the zero set of beta")


# -- conditional modes --------------------------------------------------------


def _gram(target: Target) -> tuple[np.ndarray, np.ndarray, float]:
    """(G, c, scale) with the mode solving 0.5 b'Gb - c'b + sum(scale * lam |b|)."""
    if isinstance(target, LsaSurrogate):
        Q = target.precision
        return Q, Q @ target.beta, 1.0
    X, y = target.X, target.y
    return X.T @ X, X.T @ y, 0.5


def _lambda_draws(chains: ChainStore, p: int) -> np.ndarray:
    if len(chains) == 0:
        raise ValueError("chain store is empty")
    lam = chains.lambdas
    if lam.shape[1] == 1 and p > 1:
        lam = np.repeat(lam, p, axis=1)
    if lam.shape[1] != p:
        raise ValueError(f"chain has {lam.shape[1]} smoothing parameters, target has {p} coefficients")
    return lam


def _target_p(target: Target) -> int:
    return target.p


def summarize_lambda(chains: ChainStore, statistic: str, p: Optional[int] = None) -> np.ndarray:
    """Coordinatewise mean/median of lambda draws, or the stored EB point."""
    if statistic not in STATISTICS:
        raise ValueError(f"statistic must be one of {STATISTICS}")
    if statistic == "eb-point":
        lam = chains.eb_lambda
        if lam is None:
            raise ValueError("chain carries no empirical-Bayes estimate (run eb-em or eb-sa)")
    else:
        if len(chains) == 0:
            raise ValueError("chain store is empty")
        draws = chains.lambdas
        lam = draws.mean(axis=0) if statistic == "mean" else np.median(draws, axis=0)
    lam = np.atleast_1d(np.asarray(lam, float))
    if p is not None and lam.shape[0] == 1 and p > 1:
        lam = np.full(p, lam[0])
    return lam


def conditional_modes(chains: ChainStore, target: Target, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Conditional mode for every lambda draw, shape (draws, p).

    Solves are warm-started from the previous draw; a failure raises
    :class:`NonConvergenceError` naming the draw index.
    """
    G, c, scale = _gram(target)
    lam = _lambda_draws(chains, _target_p(target))
    return solve_gram_many(G, c, scale * lam, cfg)


def _mode_at(target: Target, lam, cfg: SolverConfig, support=None) -> np.ndarray:
    G, c, scale = _gram(target)
    p = c.shape[0]
    lam = np.broadcast_to(np.asarray(lam, float), (p,))
    beta = np.zeros(p)
    if support is None:
        support = np.arange(p)
    support = np.asarray(support, dtype=int)
    if support.size:
        ix = np.ix_(support, support)
        beta[support] = solve_gram(G[ix], c[support], scale * lam[support], cfg)
    return beta


def select_point(
    chains: ChainStore,
    data: Target,
    statistic: str = "mean",
    cfg: SolverConfig = SolverConfig(),
    lam: Optional[np.ndarray] = None,
) -> SelectionResult:
    """Plug a point estimate of lambda into the conditional-mode problem.

    ``lam`` overrides the chain summary (for example an externally
    estimated EB value).
    """
    p = _target_p(data)
    if lam is None:
        lam = summarize_lambda(chains, statistic, p)
    lam = np.broadcast_to(np.asarray(lam, float), (p,)).copy()
    beta = _mode_at(data, lam, cfg)
    return SelectionResult(SparsityPattern.from_beta(beta), beta, statistic, lam)


def select_freq(
    chains: ChainStore,
    data: Target,
    threshold: float = 0.5,
    cfg: SolverConfig = SolverConfig(),
    modes: Optional[np.ndarray] = None,
) -> SelectionResult:
    """Keep coefficients whose per-draw inclusion frequency is >= threshold.

    Coefficients are re-estimated at the posterior-mean lambda with the
    excluded ones forced to zero.  ``modes`` may carry precomputed
    :func:`conditional_modes` output.
    """
    B = conditional_modes(chains, data, cfg) if modes is None else modes
    freq = np.mean(B != 0.0, axis=0)
    support = np.flatnonzero(freq >= threshold)
    lam = summarize_lambda(chains, "mean", _target_p(data))
    beta = _mode_at(data, lam, cfg, support)
    # the restricted refit can itself zero a kept coefficient
    return SelectionResult(
        SparsityPattern.from_beta(beta), beta, "freq", lam, frequencies=freq
    )


def estimate_pmp(
    chains: ChainStore,
    data: Target,
    cfg: SolverConfig = SolverConfig(),
    modes: Optional[np.ndarray] = None,
) -> dict[SparsityPattern, float]:
    """Share of lambda draws whose conditional mode has each sparsity pattern,
    sorted by decreasing probability."""
    B = conditional_modes(chains, data, cfg) if modes is None else modes
    counts = Counter(SparsityPattern.from_beta(b) for b in B)
    total = sum(counts.values())
    return {pat: k / total for pat, k in counts.most_common()}


def predict_bma(
    chains: ChainStore,
    data: Target,
    X_new,
    cfg: SolverConfig = SolverConfig(),
    modes: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Average of ``x' b_hat(lambda_i)`` over the draws.

    ``X_new`` is on the model's (centred) scale and predictions are for the
    centred response; use ``Dataset.transform_X`` and add ``y_mean`` to work
    on the raw scale.
    """
    B = conditional_modes(chains, data, cfg) if modes is None else modes
    X_new = np.atleast_2d(np.asarray(X_new, float))
    if X_new.shape[1] != B.shape[1]:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, model has {B.shape[1]}")
    return X_new @ B.mean(axis=0)


def pattern_predictions(modes: np.ndarray, X_new) -> dict[SparsityPattern, tuple[float, np.ndarray]]:
    """Per-pattern (PMP, mean prediction) over the draws visiting that pattern."""
    X_new = np.atleast_2d(np.asarray(X_new, float))
    keys = [SparsityPattern.from_beta(b) for b in modes]
    out = {}
    for pat in dict.fromkeys(keys):
        rows = [i for i, k in enumerate(keys) if k == pat]
        out[pat] = (len(rows) / len(keys), X_new @ modes[rows].mean(axis=0))
    return out


def compute_pse(predictions, actuals) -> float:
    """Mean squared prediction error."""
    pred = np.asarray(predictions, float).ravel()
    act = np.asarray(actuals, float).ravel()
    if pred.shape != act.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions, {act.shape[0]} actuals")
    if pred.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.mean((act - pred) ** 2))


# -- group and CAP selection --------------------------------------------------


def select_group(
    chains: ChainStore,
    surrogate: LsaSurrogate,
    groups: Sequence[Sequence[int]],
    statistic: str = "mean",
    cfg: SolverConfig = SolverConfig(),
    structure: Optional[CapStructure] = None,
) -> SelectionResult:
    """Group-level selection at a point estimate of the group lambdas.

    Solves ``0.5 (b - b0)'Q(b - b0) + sum_j lam_j ||b_j||`` via the group
    solver on the LSA pseudo-data (penalty ``2 lam_j`` in its RSS form).
    With a CAP ``structure``, a group is then kept only if all of its
    ancestors are kept too, and dropped groups are zeroed.
    """
    lam = summarize_lambda(chains, statistic, len(groups))
    Xt, yt = lsa_pseudo_data(surrogate)
    beta = solve_group_lasso(GroupL1Problem(Xt, yt, groups, 2.0 * lam), cfg)
    keep = np.array([np.any(beta[list(g)] != 0.0) for g in groups])
    strategy = f"group-{statistic}"
    if structure is not None and structure.relation:
        changed = True
        while changed:
            changed = False
            for j in range(len(groups)):
                if keep[j] and not all(keep[a] for a in structure.ancestors(j)):
                    keep[j] = False
                    changed = True
        for j, g in enumerate(groups):
            if not keep[j]:
                beta[list(g)] = 0.0
        strategy = f"cap-{statistic}"
    return SelectionResult(
        SparsityPattern(tuple(bool(k) for k in keep)), beta, strategy, lam, level="group"
    )


# -- serialization ------------------------------------------------------------


def write_selection_csv(results: Sequence[SelectionResult], path) -> Path:
    """One row per result: strategy, pattern (0/1 string), then beta values."""
    path = Path(path)
    p = max((r.beta.shape[0] for r in results), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "pattern"] + [f"beta_{j + 1}" for j in range(p)])
        for r in results:
            w.writerow([r.strategy, str(r.pattern)] + [repr(float(b)) for b in r.beta])
    return path


def write_pmp_csv(pmp: Mapping[SparsityPattern, float], path, top: Optional[int] = None) -> Path:
    path = Path(path)
    items = sorted(pmp.items(), key=lambda kv: -kv[1])[:top]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern", "probability"])
        for pat, prob in items:
            w.writerow([str(pat), repr(float(prob))])
    return path
