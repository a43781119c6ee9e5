"""Empirical stability of a trained forest against its out-of-bag predictors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from .dataset import Dataset
from .forest import Forest, ForestError, oob_matrix, tree_outputs
from .intervals import n_index


@dataclass(frozen=True)
class DifferenceMatrix:
    """``|forest(x_t) - OOB_i(x_t)|`` with rows = training indices, columns = test points.

    Rows whose OOB predictor is undefined are omitted and listed in
    ``dropped_indices``; ``row_indices`` maps the kept rows back.
    """

    values: np.ndarray
    row_indices: np.ndarray
    dropped_indices: list[int] = field(default_factory=list)
    response_range: float = math.inf


@dataclass(frozen=True)
class StabilityEstimate:
    nu_hat: float
    eps_hat: float
    per_index_quantiles: np.ndarray

    def to_dict(self) -> dict:
        q = self.per_index_quantiles
        return {
            "nu_hat": self.nu_hat,
            "eps_hat": self.eps_hat,
            "n_rows": int(q.size),
            "per_index_quantile_median": float(np.median(q)),
            "per_index_quantile_mean": float(np.mean(q)),
        }


def difference_matrix(forest: Forest, train: Dataset, test_features) -> DifferenceMatrix:
    """Absolute differences between the full forest and each OOB predictor on test points."""
    if train.n != forest.n_train:
        raise ForestError(f"forest was fit on {forest.n_train} rows, dataset has {train.n}")
    X = np.asarray(test_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ForestError(f"test features must have {forest.n_features} columns")
    outputs = tree_outputs(forest, X)
    lo, hi = forest.train_response_range
    full = np.clip(outputs.mean(axis=0), lo, hi)
    oob = oob_matrix(forest, X, outputs=outputs)
    defined = forest.n_oob > 0
    keep = np.flatnonzero(defined)
    values = np.abs(oob[keep] - full[None, :])
    return DifferenceMatrix(
        values=values,
        row_indices=keep,
        dropped_indices=np.flatnonzero(~defined).tolist(),
        response_range=hi - lo,
    )


def row_quantiles(values: np.ndarray, nu_hat: float) -> np.ndarray:
    """Per-row ``ceil((1 - nu_hat) m)``-th order statistic of an (r, m) matrix."""
    k = n_index(values.shape[1], nu_hat)
    return np.partition(values, k - 1, axis=1)[:, k - 1]


def estimate_stability(diffs: DifferenceMatrix | np.ndarray, nu_hat: float = 0.05) -> StabilityEstimate:
    """Per-row ``(1 - nu_hat)`` quantiles and their maximum ``eps_hat``.

    The quantile of ``m`` values is the ``ceil((1 - nu_hat) m)``-th smallest,
    so at most ``nu_hat m`` entries of a row exceed it.
    """
    if not 0.0 < nu_hat < 1.0:
        raise ValueError(f"nu_hat must lie in (0, 1), got {nu_hat}")
    values = diffs.values if isinstance(diffs, DifferenceMatrix) else np.asarray(diffs, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
        raise ValueError("difference matrix is empty")
    q = row_quantiles(values, nu_hat)
    return StabilityEstimate(nu_hat=nu_hat, eps_hat=float(q.max()), per_index_quantiles=q)


def exceedance_fraction(diffs: DifferenceMatrix | np.ndarray, eps: float) -> float:
    """Fraction of (i, t) pairs whose difference exceeds ``eps``."""
    values = diffs.values if isinstance(diffs, DifferenceMatrix) else np.asarray(diffs)
    return float(np.mean(values > eps))


@dataclass(frozen=True)
class DensityExport:
    values: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    dropped: int


def density_grid(values, n_grid: int = 512) -> tuple[np.ndarray, np.ndarray, float]:
    """Gaussian KDE with Silverman's bandwidth on a grid spanning the data +/- 4 bandwidths."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2 or np.ptp(v) == 0:
        # degenerate sample: a triangle of unit mass around the single value
        grid = np.array([v[0] - 0.5, v[0], v[0] + 0.5])
        return grid, np.array([0.0, 2.0, 0.0]), 0.0
    kde = gaussian_kde(v, bw_method="silverman")
    bw = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(v.min() - 4 * bw, v.max() + 4 * bw, n_grid)
    return grid, kde(grid), bw


def export_density(values, path, log10: bool = False, n_grid: int = 512) -> DensityExport:
    """Write raw values and a KDE grid to one long-format CSV.

    Columns are ``kind,x,density``: ``kind=value`` rows carry the
    (optionally ``log10``-transformed) data, ``kind=grid`` rows the density
    curve. With ``log10`` non-positive values are dropped and counted.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    dropped = 0
    if log10:
        positive = v > 0
        dropped = int((~positive).sum())
        v = np.log10(v[positive])
    if v.size == 0:
        raise ValueError("no values left to export")
    grid, dens, bw = density_grid(v, n_grid)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "x", "density"])
        for x in v:
            writer.writerow(["value", repr(float(x)), ""])
        for x, d in zip(grid, dens):
            writer.writerow(["grid", repr(float(x)), repr(float(d))])
    return DensityExport(values=v, grid=grid, density=dens, bandwidth=bw, dropped=dropped)
