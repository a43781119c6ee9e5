"""Tabular regression data: CSV ingestion, synthetic generators, splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus response vector.

    Arrays are copied to float64 and made read-only, so a ``Dataset`` can be
    shared freely between readers.
    """

    features: np.ndarray
    response: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    response_name: str = "y"

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.response, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1:
            raise DataError("features must be 2-d and response 1-d")
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"features have {X.shape[0]} rows but response has {y.shape[0]}"
            )
        if y.shape[0] < 2:
            raise DataError("a dataset needs at least 2 rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("non-finite values are not allowed")
        names = list(self.feature_names) or [f"x{j}" for j in range(X.shape[1])]
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.response.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(
            self.features[rows], self.response[rows], self.feature_names, self.response_name
        )

    def drop(self, i: int) -> Dataset:
        """Copy of the dataset without row ``i``."""
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(np.flatnonzero(keep))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*self.feature_names, self.response_name])
            for row, target in zip(self.features, self.response):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def _read_table(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for lineno, raw in enumerate(reader, start=1):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"row {lineno} has {len(raw)} cells, expected {len(header)}")
            values = []
            for name, cell in zip(header, raw):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {lineno}, column {name!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}, column {name!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def load_csv(path, response_column: str) -> Dataset:
    """Read a headed, comma-separated file; ``response_column`` is the target.

    Every cell must parse as a finite float. Errors name the offending row
    (1-based, header excluded) and column.
    """
    header, table = _read_table(path)
    if response_column not in header:
        raise DataError(f"column {response_column!r} not found in {header}")
    if table.shape[0] < 2:
        raise DataError(f"{path} has {table.shape[0]} data rows; at least 2 are needed")
    target = header.index(response_column)
    cols = [j for j in range(len(header)) if j != target]
    return Dataset(
        table[:, cols], table[:, target], [header[j] for j in cols], response_column
    )


def load_features(path, drop: str | None = None) -> np.ndarray:
    """Feature matrix from a headed CSV, skipping column ``drop`` if present."""
    header, table = _read_table(path)
    if table.shape[0] == 0:
        raise DataError(f"{path} has no data rows")
    cols = [j for j, name in enumerate(header) if name != drop]
    return table[:, cols]


def _check_n(n: int) -> None:
    if n < 2:
        raise DataError(f"n must be at least 2, got {n}")


def cauchy_features(y: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Map Cauchy responses to the three-dimensional feature vector.

    ``[0.5 y + sin y, y^2 - 0.2 y^3, 1{y > 0} + zeta]``
    """
    return np.column_stack(
        [0.5 * y + np.sin(y), y**2 - 0.2 * y**3, (y > 0).astype(np.float64) + zeta]
    )


def synthetic_cauchy(n: int, seed: int) -> Dataset:
    """Standard Cauchy response with features that are noisy functions of it.

    The response is drawn by inverse CDF, ``tan(pi (U - 1/2))``, from a
    seeded uniform stream; ``zeta`` is an independent standard normal.
    """
    _check_n(n)
    rng = np.random.default_rng(seed)
    y = np.tan(np.pi * (rng.random(n) - 0.5))
    zeta = rng.standard_normal(n)
    return Dataset(cauchy_features(y, zeta), y, ["x0", "x1", "x2"], "y")


def light_tail_mean(X: np.ndarray) -> np.ndarray:
    """Regression function of the light-tailed generator.

    f(x) = 4 x0 + 2 x1^2 + sin(2 pi x2)
    """
    X = np.asarray(X, dtype=np.float64)
    return 4.0 * X[:, 0] + 2.0 * X[:, 1] ** 2 + np.sin(2.0 * np.pi * X[:, 2])


# With X ~ U[0,1]^3 and unit-variance noise:
#   E[f^2] = 16/3 + 4/5 + 1/2 + 2*4*2*(1/2)*(1/3) = 9.3,  E[Y^2] = E[f^2] + 1
LIGHT_TAIL_SECOND_MOMENT = 16 / 3 + 4 / 5 + 1 / 2 + 8 / 3 + 1.0


def synthetic_light_tail(n: int, seed: int) -> Dataset:
    """Additive model ``Y = f(X) + N(0, 1)`` with ``X`` uniform on the unit cube."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    y = light_tail_mean(X) + rng.standard_normal(n)
    return Dataset(X, y, ["x0", "x1", "x2"], "y")


GENERATORS = {"cauchy": synthetic_cauchy, "light_tail": synthetic_light_tail}


def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle rows with ``seed`` and cut after ``floor(train_fraction * n)``."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = math.floor(train_fraction * data.n)
    if n_train < 2 or data.n - n_train < 2:
        raise DataError(
            f"splitting {data.n} rows at {train_fraction} leaves a part with fewer than 2 rows"
        )
    perm = np.random.default_rng(seed).permutation(data.n)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])
