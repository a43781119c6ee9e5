import csv

import numpy as np
import pytest

from rfstab.dataset import synthetic_light_tail
from rfstab.forest import ForestConfig, fit, predict, predict_excluding
from rfstab.stability import (
    density_grid,
    difference_matrix,
    estimate_stability,
    exceedance_fraction,
    export_density,
    row_quantiles,
)


@pytest.fixture(scope="module")
def fitted():
    train = synthetic_light_tail(150, 0)
    test = synthetic_light_tail(60, 1)
    forest = fit(train, ForestConfig(n_trees=100, seed=2))
    return forest, train, test


def test_difference_matrix_matches_definition(fitted):
    forest, train, test = fitted
    D = difference_matrix(forest, train, test.features)
    assert D.values.shape == (150, 60)
    full = predict(forest, test.features)
    for i in (0, 17, 149):
        np.testing.assert_allclose(
            D.values[i], np.abs(predict_excluding(forest, i, test.features) - full), rtol=1e-10, atol=1e-12
        )
    assert D.response_range == pytest.approx(np.ptp(train.response))


def test_undefined_rows_dropped():
    train = synthetic_light_tail(40, 3)
    forest = fit(train, ForestConfig(n_trees=2, seed=0))
    D = difference_matrix(forest, train, train.features[:5])
    undefined = np.flatnonzero(forest.n_oob == 0)
    assert D.dropped_indices == undefined.tolist()
    assert D.values.shape[0] + len(undefined) == 40
    assert np.isfinite(D.values).all()


def test_row_quantile_convention():
    v = np.arange(1.0, 21.0)[None, :]
    # ceil(0.95 * 20) = 19
    assert row_quantiles(v, 0.05)[0] == 19.0
    assert row_quantiles(v, 0.5)[0] == 10.0


def test_estimate_bounds_exceedance_by_construction(fitted):
    forest, train, test = fitted
    D = difference_matrix(forest, train, test.features)
    est = estimate_stability(D, 0.05)
    assert est.eps_hat == est.per_index_quantiles.max()
    assert exceedance_fraction(D, est.eps_hat) <= 0.05
    assert (D.values > est.per_index_quantiles[:, None]).sum(axis=1).max() <= 0.05 * 60


def test_estimate_permutation_invariant(fitted):
    forest, train, test = fitted
    D = difference_matrix(forest, train, test.features)
    perm = np.random.default_rng(0).permutation(60)
    a = estimate_stability(D.values, 0.05)
    b = estimate_stability(D.values[:, perm], 0.05)
    assert a.eps_hat == b.eps_hat
    np.testing.assert_array_equal(a.per_index_quantiles, b.per_index_quantiles)


def test_held_out_exceedance(fitted):
    forest, train, _ = fitted
    est = estimate_stability(difference_matrix(forest, train, synthetic_light_tail(60, 10).features), 0.05)
    fresh = difference_matrix(forest, train, synthetic_light_tail(200, 11).features)
    assert exceedance_fraction(fresh, est.eps_hat) <= 0.10


def test_estimate_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate_stability(np.ones((2, 2)), 0.0)
    with pytest.raises(ValueError):
        estimate_stability(np.ones((0, 3)), 0.05)


def test_density_grid_silverman():
    v = np.random.default_rng(0).normal(size=400)
    grid, dens, bw = density_grid(v, 256)
    expected_bw = np.std(v, ddof=1) * (400 * 3 / 4) ** (-1 / 5)
    assert bw == pytest.approx(expected_bw, rel=1e-10)
    assert grid[0] == pytest.approx(v.min() - 4 * bw)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def test_density_grid_degenerate():
    grid, dens, bw = density_grid(np.full(5, 2.0))
    assert bw == 0.0
    assert np.trapezoid(dens, grid) == pytest.approx(1.0)


def test_export_density_csv(tmp_path):
    v = np.array([0.0, 1e-3, 1e-2, 1e-1, 1.0])
    out = export_density(v, tmp_path / "d.csv", log10=True, n_grid=16)
    assert out.dropped == 1
    np.testing.assert_allclose(out.values, [-3, -2, -1, 0])
    with open(tmp_path / "d.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["kind"] for r in rows].count("value") == 4
    assert [r["kind"] for r in rows].count("grid") == 16
    with pytest.raises(ValueError):
        export_density([0.0, -1.0], tmp_path / "e.csv", log10=True)
