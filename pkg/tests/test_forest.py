import hashlib
import math

import numpy as np
import pytest

from rfstab.dataset import Dataset, synthetic_cauchy, synthetic_light_tail
from rfstab.forest import (
    ForestConfig,
    ForestError,
    _tree_seeds,
    fit,
    fit_loo,
    load_forest,
    oob_matrix,
    oob_predictions,
    predict,
    predict_excluding,
    save_forest,
    tree_outputs,
)
from rfstab.theory import inclusion_prob


def reference_tree(X, y, bag, keys, mtry, min_node_size):
    """Plain-Python CART with the same node numbering and tie rules; returns a predictor."""
    nodes = {}
    counter = [1]

    def build(node, rows):
        vals = y[rows]
        if vals.min() == vals.max():
            nodes[node] = ("leaf", vals[0])
            return
        mean = min(max(vals.mean(), vals.min()), vals.max())
        nodes[node] = ("leaf", mean)
        if len(rows) <= min_node_size:
            return
        best = None
        parent_sse = ((vals - vals.mean()) ** 2).sum()
        for f in sorted(np.argsort(keys[node])[:mtry]):
            xs = np.unique(X[rows, f])
            for a, b in zip(xs[:-1], xs[1:]):
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                left = X[rows, f] <= thr
                sse = ((vals[left] - vals[left].mean()) ** 2).sum() + ((vals[~left] - vals[~left].mean()) ** 2).sum()
                if best is None or sse < best[0] - 1e-9:
                    best = (sse, f, thr)
        if best is None or parent_sse - best[0] <= 1e-9:
            return
        _, f, thr = best
        go_left = X[rows, f] <= thr
        li, ri = counter[0], counter[0] + 1
        counter[0] += 2
        nodes[node] = ("split", f, thr, li, ri)
        build(li, rows[go_left])
        build(ri, rows[~go_left])

    build(0, np.asarray(bag))

    def predict_one(x):
        node = nodes[0]
        while node[0] == "split":
            _, f, thr, li, ri = node
            node = nodes[li] if x[f] <= thr else nodes[ri]
        return node[1]

    return predict_one


@pytest.mark.parametrize("seed, rounded", [(0, False), (1, False), (2, False), (3, True), (4, True)])
def test_tree_matches_reference_cart(seed, rounded):
    data = synthetic_light_tail(40, seed)
    if rounded:
        # coarse features create tied values and duplicate partitions
        data = Dataset(np.round(data.features, 1), np.round(data.response))
    X, y = data.features, data.response
    config = ForestConfig(n_trees=3, mtry=2, min_node_size=3, seed=seed)
    forest = fit(data, config)
    probes = np.random.default_rng(seed).random((200, 3))
    for b, seq in enumerate(_tree_seeds(seed, 3)):
        rng = np.random.default_rng(seq)
        bag = rng.integers(0, 40, size=40)
        keys = rng.random((81, 3))
        np.testing.assert_array_equal(bag, forest.bags[b])
        ref = reference_tree(X, y, bag, keys, 2, 3)
        tree = forest.tree(b)
        for x in np.vstack([probes, X]):
            assert tree.predict_one(x) == pytest.approx(ref(x), abs=1e-12)


def test_single_tree_predict_matches_vectorized():
    data = synthetic_light_tail(80, 4)
    forest = fit(data, ForestConfig(n_trees=5, seed=1))
    X = np.random.default_rng(0).random((50, 3))
    out = tree_outputs(forest, X)
    for b, tree in enumerate(forest.trees):
        np.testing.assert_array_equal(out[b], [tree.predict_one(x) for x in X])


def test_bags_are_size_n_with_replacement():
    data = synthetic_light_tail(50, 0)
    forest = fit(data, ForestConfig(n_trees=20, seed=3))
    assert forest.bags.shape == (20, 50)
    assert forest.inbag_counts.sum(axis=1).tolist() == [50] * 20
    assert (forest.inbag_counts.max(axis=1) > 1).all()
    np.testing.assert_array_equal(forest.n_oob, (forest.inbag_counts == 0).sum(axis=0))


def test_oob_count_is_binomial():
    n, B = 200, 400
    forest = fit(synthetic_light_tail(n, 1), ForestConfig(n_trees=B, seed=2, max_depth=1))
    mean = B * (1 - inclusion_prob(n))
    # negative dependence across indices makes this sd conservative
    sd = math.sqrt(B * inclusion_prob(n) * (1 - inclusion_prob(n)) / n)
    assert abs(forest.n_oob.mean() - mean) < 3 * sd


def test_predictions_within_response_range():
    data = synthetic_cauchy(300, 5)
    forest = fit(data, ForestConfig(n_trees=50, seed=5))
    probes = np.random.default_rng(1).normal(scale=50, size=(500, 3))
    lo, hi = data.response.min(), data.response.max()
    p = predict(forest, probes)
    assert ((p >= lo) & (p <= hi)).all()
    oob = oob_matrix(forest, probes)
    defined = oob[np.isfinite(oob)]
    assert ((defined >= lo) & (defined <= hi)).all()


def test_constant_response_exact():
    X = np.random.default_rng(0).random((60, 2))
    data = Dataset(X, np.full(60, 0.1))
    forest = fit(data, ForestConfig(n_trees=10))
    assert (predict(forest, X) == 0.1).all()
    assert all(t.n_nodes == 1 for t in forest.trees)


def test_min_node_size_and_depth():
    data = synthetic_light_tail(100, 0)
    stump = fit(data, ForestConfig(n_trees=10, max_depth=1, seed=1))
    assert all(t.n_nodes <= 3 for t in stump.trees)
    root_only = fit(data, ForestConfig(n_trees=4, min_node_size=100, seed=1))
    for b, t in enumerate(root_only.trees):
        assert t.n_nodes == 1
        assert t.value[0] == pytest.approx(data.response[root_only.bags[b]].mean())


def test_fully_grown_trees_interpolate_their_bag():
    data = synthetic_light_tail(60, 2)
    forest = fit(data, ForestConfig(n_trees=3, min_node_size=1, mtry=3, seed=0))
    for b, tree in enumerate(forest.trees):
        for i in np.unique(forest.bags[b]):
            assert tree.predict_one(data.features[i]) == data.response[i]


def _digest(forest):
    h = hashlib.sha256()
    for name in ("feature", "threshold", "left", "right", "value", "offsets", "bags"):
        h.update(np.ascontiguousarray(getattr(forest, name)).tobytes())
    return h.hexdigest()


def test_refit_deterministic_and_thread_independent():
    data = synthetic_light_tail(120, 9)
    config = ForestConfig(n_trees=30, seed=11)
    a = fit(data, config)
    b = fit(data, config)
    c = fit(data, config, n_jobs=3)
    assert _digest(a) == _digest(b) == _digest(c)
    assert _digest(fit(data, ForestConfig(n_trees=30, seed=12))) != _digest(a)


def test_save_load_roundtrip(tmp_path):
    data = synthetic_light_tail(80, 1)
    forest = fit(data, ForestConfig(n_trees=12, seed=4, max_depth=6))
    p1, p2 = tmp_path / "a.rff", tmp_path / "b.rff"
    save_forest(forest, p1)
    save_forest(fit(data, forest.config), p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_forest(p1)
    assert back.config == forest.config
    assert _digest(back) == _digest(forest)
    np.testing.assert_array_equal(predict(back, data.features), predict(forest, data.features))


def test_load_rejects_foreign_zip(tmp_path):
    import zipfile

    path = tmp_path / "x.zip"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("meta.json", '{"format": "other"}')
    with pytest.raises(ForestError):
        load_forest(path)


def test_oob_predictor_definitions_agree():
    data = synthetic_light_tail(40, 3)
    forest = fit(data, ForestConfig(n_trees=25, seed=6))
    X = np.random.default_rng(2).random((7, 3))
    M = oob_matrix(forest, X)
    own = oob_predictions(forest, data)
    out = tree_outputs(forest, X)
    for i in range(data.n):
        mask = forest.oob_mask[:, i]
        if mask.any():
            np.testing.assert_allclose(M[i], out[mask].mean(axis=0), rtol=1e-12)
            np.testing.assert_allclose(predict_excluding(forest, i, X), M[i], rtol=1e-12)
            assert predict_excluding(forest, i, data.features[i]) == pytest.approx(own[i], rel=1e-12)
        else:
            assert predict_excluding(forest, i, X[0]) is None
            assert np.isnan(M[i]).all() and np.isnan(own[i])


def test_undefined_oob_with_single_tree():
    data = synthetic_light_tail(30, 0)
    forest = fit(data, ForestConfig(n_trees=1, seed=0))
    inbag = np.flatnonzero(forest.inbag_counts[0] > 0)
    assert np.isnan(oob_predictions(forest, data)[inbag]).all()
    assert predict_excluding(forest, int(inbag[0]), data.features[0]) is None


def test_aggregation_identity():
    data = synthetic_light_tail(50, 8)
    forest = fit(data, ForestConfig(n_trees=40, seed=1))
    X = np.random.default_rng(3).random((10, 3))
    expected = np.mean([[t.predict_one(x) for x in X] for t in forest.trees], axis=0)
    np.testing.assert_allclose(predict(forest, X), expected, rtol=1e-12)
    assert isinstance(predict(forest, X[0]), float)


def test_fit_loo():
    data = synthetic_light_tail(20, 1)
    config = ForestConfig(n_trees=10, seed=3)
    a = fit_loo(data, config, 4)
    assert a.n_train == 19
    assert _digest(a) == _digest(fit_loo(data, config, 4))
    assert _digest(a) != _digest(fit(data.drop(4), config))
    with pytest.raises(ForestError):
        fit_loo(data, config, 20)
    with pytest.raises(ForestError):
        fit_loo(Dataset(np.zeros((2, 1)), [0.0, 1.0]), config, 0)


@pytest.mark.parametrize(
    "config",
    [
        ForestConfig(n_trees=0),
        ForestConfig(mtry=4),
        ForestConfig(min_node_size=0),
        ForestConfig(max_depth=0),
        ForestConfig(seed=-1),
    ],
)
def test_invalid_configs(config):
    with pytest.raises(ForestError):
        fit(synthetic_light_tail(10, 0), config)


def test_wrong_feature_count():
    forest = fit(synthetic_light_tail(10, 0), ForestConfig(n_trees=2))
    with pytest.raises(ForestError):
        predict(forest, np.zeros((3, 2)))
    with pytest.raises(ForestError):
        oob_predictions(forest, synthetic_light_tail(11, 0))
