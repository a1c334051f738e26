from __future__ import annotations

import numpy as np
import pytest

from balasso.data import Dataset, standardize


def batch_means_se(x, batches: int = 50) -> np.ndarray:
    """Monte-Carlo standard error of the mean of a (possibly autocorrelated) chain."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] // batches
    means = x[: m * batches].reshape(batches, m, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def simulated(seed: int, n: int = 60, beta=(3.0, 0.0, 1.5), sigma: float = 1.0) -> Dataset:
    g = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = g.standard_normal((n, beta.size))
    y = X @ beta + sigma * g.standard_normal(n)
    return standardize(Dataset(y, X), "center")


@pytest.fixture
def small_data() -> Dataset:
    return simulated(0)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
