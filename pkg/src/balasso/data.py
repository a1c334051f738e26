"""Dataset container, standardisation and CSV ingestion."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = ["Dataset", "CsvSchema", "DataError", "standardize", "load_csv"]


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Response ``y`` (n,) and design ``X`` (n, p).

    ``x_mean``/``x_scale``/``y_mean`` record what :func:`standardize` removed
    so new rows can be mapped onto the same scale.
    """

    y: np.ndarray
    X: np.ndarray
    groups: Optional[list[list[int]]] = None
    names: Optional[list[str]] = None
    centered: bool = False
    standardized: bool = False
    x_mean: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None
    y_mean: float = 0.0
    original: Optional["Dataset"] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X has {self.X.shape[0]} rows, y has {self.y.shape[0]}")
        if self.groups is not None:
            cols = sorted(c for g in self.groups for c in g)
            if cols != list(range(self.p)):
                raise DataError("groups must partition the columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def transform_X(self, X_new) -> np.ndarray:
        """Map raw rows onto this dataset's centred/scaled columns."""
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        if X_new.shape[1] != self.p:
            raise DataError(f"expected {self.p} columns, got {X_new.shape[1]}")
        if self.x_mean is not None:
            X_new = X_new - self.x_mean
        if self.x_scale is not None:
            X_new = X_new / self.x_scale
        return X_new

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update(repr(self.groups).encode())
        return h.hexdigest()[:16]


def standardize(data: Dataset, mode: str = "center") -> Dataset:
    """Centre (and optionally scale to unit sample s.d.) ``y`` and ``X``.

    Scaling divides each column of X by its ddof=1 standard deviation; y is
    only centred.  Applying the transform to an already transformed dataset
    is a no-op up to rounding.
    """
    if mode not in ("center", "center-and-scale"):
        raise ValueError(f"unknown standardisation mode {mode!r}")
    if data.n < 2:
        raise DataError("need at least two rows to standardise")
    base = data.original if data.original is not None else data
    x_mean = base.X.mean(axis=0)
    X = base.X - x_mean
    y_mean = float(base.y.mean())
    x_scale = None
    if mode == "center-and-scale":
        x_scale = X.std(axis=0, ddof=1)
        zero = np.flatnonzero(x_scale <= 1e-12 * np.maximum(1.0, np.abs(x_mean)))
        if zero.size:
            raise DataError(f"zero-variance column(s) {zero.tolist()} cannot be scaled")
        X = X / x_scale
    return replace(
        data,
        y=base.y - y_mean,
        X=X,
        centered=True,
        standardized=mode == "center-and-scale",
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=y_mean,
        original=base,
    )


@dataclass(frozen=True)
class CsvSchema:
    response: Optional[str]  # None: no response column (prediction inputs)
    predictors: Optional[Sequence[str]] = None
    drop_rows: Sequence[int] = ()  # 1-based data-row numbers


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a headed numeric CSV.

    Row numbers in errors and ``drop_rows`` count data rows from 1 (the header
    is not a row); columns count from 1.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {r} has {len(record)} fields, header has {len(header)}"
                )
            vals = []
            for col, cell in enumerate(record, start=1):
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise DataError(f"{path}: missing value at row {r}, column {col}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {r}, column {col}"
                    ) from None
            rows.append((r, vals))

    if schema.response is not None and schema.response not in header:
        raise DataError(f"{path}: response column {schema.response!r} not found")
    predictors = list(schema.predictors) if schema.predictors else [
        h for h in header if h != schema.response
    ]
    missing = [c for c in predictors if c not in header]
    if missing:
        raise DataError(f"{path}: predictor column(s) {missing} not found")
    drop = set(schema.drop_rows)
    kept = [vals for r, vals in rows if r not in drop]
    M = np.array(kept, dtype=float).reshape(len(kept), len(header))
    xi = [header.index(c) for c in predictors]
    if schema.response is None:
        y = np.full(M.shape[0], np.nan)
    else:
        y = M[:, header.index(schema.response)]
    return Dataset(y=y, X=M[:, xi], names=predictors)
