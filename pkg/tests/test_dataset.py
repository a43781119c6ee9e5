import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfstab.dataset import (
    LIGHT_TAIL_SECOND_MOMENT,
    DataError,
    Dataset,
    cauchy_features,
    load_csv,
    load_features,
    split,
    synthetic_cauchy,
    synthetic_light_tail,
)


def test_dataset_is_read_only_copy():
    X = np.arange(6.0).reshape(3, 2)
    d = Dataset(X, [1.0, 2.0, 3.0])
    X[0, 0] = 99
    assert d.features[0, 0] == 0
    with pytest.raises(ValueError):
        d.features[0, 0] = 1
    assert d.feature_names == ["x0", "x1"]


@pytest.mark.parametrize(
    "X, y",
    [
        (np.zeros((3, 2)), np.zeros(2)),
        (np.zeros((1, 2)), np.zeros(1)),
        (np.array([[0.0], [np.nan]]), np.zeros(2)),
        (np.zeros((2, 1)), np.array([0.0, np.inf])),
    ],
)
def test_dataset_rejects(X, y):
    with pytest.raises(DataError):
        Dataset(X, y)


def test_csv_roundtrip(tmp_path):
    d = synthetic_light_tail(50, 3)
    path = tmp_path / "d.csv"
    d.to_csv(path)
    back = load_csv(path, "y")
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.response, d.response)
    assert back.feature_names == d.feature_names
    np.testing.assert_array_equal(load_features(path, drop="y"), d.features)


def test_csv_response_column_anywhere(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("target,a,b\n1,2,3\n4,5,6\n")
    d = load_csv(path, "target")
    assert d.feature_names == ["a", "b"]
    np.testing.assert_array_equal(d.response, [1, 4])


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("a,y\n1,2\n1,x\n", "row 2, column 'y'"),
        ("a,y\n1,2\nnan,3\n", "non-finite"),
        ("a,y\n1,2\n", "at least 2"),
        ("a,b\n1,2\n3,4\n", "not found"),
        ("a,y\n1,2\n3\n", "row 2 has 1 cells"),
        ("", "empty"),
    ],
)
def test_csv_errors(tmp_path, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=fragment):
        load_csv(path, "y")


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "nope.csv", "y")


def test_cauchy_shape_and_formula():
    d = synthetic_cauchy(100, 1)
    assert d.features.shape == (100, 3)
    assert np.isfinite(d.response).all()
    y = d.response
    np.testing.assert_allclose(d.features[:, 0], 0.5 * y + np.sin(y), rtol=1e-15, atol=0)
    np.testing.assert_allclose(d.features[:, 1], y**2 - 0.2 * y**3, rtol=1e-15, atol=0)


def test_cauchy_third_feature():
    y = np.array([-1.0, 2.0])
    zeta = np.array([0.5, 0.5])
    np.testing.assert_array_equal(cauchy_features(y, zeta)[:, 2], [0.5, 1.5])


def test_cauchy_is_heavy_tailed():
    y = synthetic_cauchy(20_000, 0).response
    # standard Cauchy quartiles are +/-1
    assert np.quantile(y, 0.75) == pytest.approx(1.0, abs=0.05)
    assert np.quantile(y, 0.25) == pytest.approx(-1.0, abs=0.05)


@pytest.mark.parametrize("gen", [synthetic_cauchy, synthetic_light_tail])
def test_generators_deterministic(gen):
    a, b, c = gen(64, 11), gen(64, 11), gen(64, 12)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.response, b.response)
    assert not np.array_equal(a.response, c.response)


def test_light_tail_second_moment():
    assert LIGHT_TAIL_SECOND_MOMENT == pytest.approx(10.3)
    y = synthetic_light_tail(100_000, 2).response
    se = np.std(y**2, ddof=1) / math.sqrt(y.size)
    assert abs(np.mean(y**2) - LIGHT_TAIL_SECOND_MOMENT) < 3 * se


def test_split_sizes():
    d = synthetic_light_tail(6000, 0)
    a, b = split(d, 0.5, 1)
    assert a.n == b.n == 3000
    a, b = split(synthetic_light_tail(4, 0), 0.5, 1)
    assert a.n == b.n == 2


@pytest.mark.parametrize("frac", [0.1, 0.9, 0.0, 1.0])
def test_split_degenerate(frac):
    with pytest.raises(DataError):
        split(synthetic_light_tail(10, 0), frac, 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 200), frac=st.floats(0.2, 0.8), seed=st.integers(0, 2**32 - 1))
def test_split_is_partition(n, frac, seed):
    d = synthetic_light_tail(n, 5)
    if math.floor(frac * n) < 2 or n - math.floor(frac * n) < 2:
        return
    a, b = split(d, frac, seed)
    assert a.n == math.floor(frac * n)
    rows = np.vstack([np.column_stack([a.features, a.response]), np.column_stack([b.features, b.response])])
    orig = np.column_stack([d.features, d.response])
    np.testing.assert_array_equal(np.unique(rows, axis=0), np.unique(orig, axis=0))
    assert rows.shape == orig.shape
