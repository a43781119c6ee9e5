"""Bagged CART regression forests with explicit bag bookkeeping.

Every tree remembers the bootstrap draw it was grown on, so the
out-of-bag predictor for training point ``i`` (the mean over the trees
whose bag misses ``i``) is available for any query point, not only at
``X_i``.

Seeding: the root seed feeds ``numpy.random.SeedSequence``; tree ``b`` uses
the ``b``-th spawned child for both its bag and its split-feature draws.
Trees therefore do not depend on fitting order, and fitting in parallel
gives the same forest as fitting sequentially.
"""

from __future__ import annotations

import io
import json
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from ._tree import LEAF, apply_trees, grow_tree
from .dataset import Dataset

FORMAT_VERSION = 1


class ForestError(ValueError):
    """Invalid forest configuration or mismatched inputs."""


@dataclass(frozen=True)
class ForestConfig:
    """Forest hyper-parameters.

    ``mtry=None`` resolves to ``max(d // 3, 1)`` at fit time and
    ``max_depth=None`` means unlimited depth. A node holding
    ``min_node_size`` or fewer bootstrap draws is not split.
    """

    n_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 5
    max_depth: int | None = None
    seed: int = 0

    def resolved_mtry(self, n_features: int) -> int:
        return self.mtry if self.mtry is not None else max(n_features // 3, 1)

    def validate(self, n_features: int) -> None:
        if self.n_trees < 1:
            raise ForestError("n_trees must be at least 1")
        if self.min_node_size < 1:
            raise ForestError("min_node_size must be at least 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError("max_depth must be a positive integer or None")
        if self.seed < 0:
            raise ForestError("seed must be non-negative")
        mtry = self.resolved_mtry(n_features)
        if not 1 <= mtry <= n_features:
            raise ForestError(f"mtry={mtry} is outside [1, {n_features}]")


@dataclass(frozen=True)
class Tree:
    """One regression tree as flat node arrays (leaves have feature -1)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def predict_one(self, x) -> float:
        node = 0
        while self.feature[node] != LEAF:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return float(self.value[node])


@dataclass(frozen=True, eq=False)
class Forest:
    """A trained ensemble of ``B`` trees plus the ``B`` bags they were grown on.

    Trees are packed back to back in the node arrays; tree ``b`` occupies
    ``offsets[b]:offsets[b + 1]``. ``bags[b]`` holds the ``n`` training
    indices drawn with replacement for tree ``b``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray
    bags: np.ndarray
    config: ForestConfig
    n_features: int
    train_response_range: tuple[float, float]

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def n_train(self) -> int:
        return self.bags.shape[1]

    @property
    def trees(self) -> list[Tree]:
        return [self.tree(b) for b in range(self.n_trees)]

    def tree(self, b: int) -> Tree:
        s = slice(self.offsets[b], self.offsets[b + 1])
        return Tree(self.feature[s], self.threshold[s], self.left[s], self.right[s], self.value[s])

    @cached_property
    def inbag_counts(self) -> np.ndarray:
        """(B, n) matrix: how often training index ``i`` was drawn into bag ``b``."""
        B, n = self.bags.shape
        counts = np.zeros((B, n), dtype=np.int32)
        rows = np.repeat(np.arange(B), n)
        np.add.at(counts, (rows, self.bags.ravel()), 1)
        return counts

    @cached_property
    def oob_mask(self) -> np.ndarray:
        """(B, n) boolean matrix, True where tree ``b`` never saw index ``i``."""
        return self.inbag_counts == 0

    @cached_property
    def n_oob(self) -> np.ndarray:
        """``B_i``: number of trees whose bag excludes ``i``."""
        return self.oob_mask.sum(axis=0)


def _tree_seeds(seed, n_trees: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_trees)


def _grow(X, y, n, mtry, min_node_size, max_depth, seq):
    rng = np.random.default_rng(seq)
    bag = rng.integers(0, n, size=n)
    keys = rng.random((2 * n + 1, X.shape[1]))
    return bag, grow_tree(X, y, bag, keys, mtry, min_node_size, max_depth)


def _fit_arrays(data: Dataset, config: ForestConfig, seed_entropy, n_jobs: int) -> Forest:
    config.validate(data.n_features)
    X = np.ascontiguousarray(data.features)
    y = np.ascontiguousarray(data.response)
    n = data.n
    mtry = config.resolved_mtry(data.n_features)
    depth = -1 if config.max_depth is None else config.max_depth
    seeds = _tree_seeds(seed_entropy, config.n_trees)

    def work(seq):
        return _grow(X, y, n, mtry, config.min_node_size, depth, seq)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, seeds))
    else:
        results = [work(seq) for seq in seeds]

    sizes = [r[1][0].shape[0] for r in results]
    offsets = np.zeros(len(results) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    parts = list(zip(*(r[1] for r in results)))
    return Forest(
        feature=np.concatenate(parts[0]),
        threshold=np.concatenate(parts[1]),
        left=np.concatenate(parts[2]),
        right=np.concatenate(parts[3]),
        value=np.concatenate(parts[4]),
        offsets=offsets,
        bags=np.stack([r[0] for r in results]).astype(np.int32),
        config=config,
        n_features=data.n_features,
        train_response_range=(float(y.min()), float(y.max())),
    )


def fit(data: Dataset, config: ForestConfig, n_jobs: int = 1) -> Forest:
    """Grow ``config.n_trees`` trees, each on a size-``n`` bootstrap bag.

    At every node ``mtry`` features are drawn without replacement and the
    split maximising the reduction in squared error is taken; thresholds
    are midpoints between consecutive distinct values. Ties go to the
    lowest feature index, then the lowest threshold. The result depends
    only on ``(data, config)``.
    """
    return _fit_arrays(data, config, config.seed, n_jobs)


def fit_loo(data: Dataset, config: ForestConfig, i: int, n_jobs: int = 1) -> Forest:
    """Refit from scratch on the data without row ``i``.

    The seed entropy is ``[config.seed, i]``. That keeps the refits for
    different ``i`` independent of each other and of :func:`fit`.
    """
    if data.n < 3:
        raise ForestError("leave-one-out refitting needs at least 3 rows")
    if not 0 <= i < data.n:
        raise ForestError(f"index {i} out of range for {data.n} rows")
    return _fit_arrays(data.drop(i), config, [config.seed, i], n_jobs)


def _as_matrix(forest: Forest, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ForestError(
            f"expected {forest.n_features} features, got array of shape {np.shape(x)}"
        )
    return np.ascontiguousarray(X), single


def tree_outputs(forest: Forest, X) -> np.ndarray:
    """(B, m) matrix of every tree's prediction at every row of ``X``."""
    X, _ = _as_matrix(forest, X)
    return apply_trees(
        forest.feature, forest.threshold, forest.left, forest.right,
        forest.value, forest.offsets, X,
    )


def _clip(forest: Forest, values):
    # rounding in a mean can step one ulp outside the response range
    lo, hi = forest.train_response_range
    return np.clip(values, lo, hi)


def predict(forest: Forest, x):
    """Mean of all tree outputs; a float for one point, an array for a matrix."""
    X, single = _as_matrix(forest, x)
    out = _clip(forest, tree_outputs(forest, X).mean(axis=0))
    return float(out[0]) if single else out


def _check_index(forest: Forest, i: int) -> None:
    if not 0 <= i < forest.n_train:
        raise ForestError(f"training index {i} out of range for n={forest.n_train}")


def predict_excluding(forest: Forest, i: int, x):
    """Mean over the trees whose bag excludes ``i``.

    Returns ``None`` (one point) or NaN entries (matrix) when every bag
    contains ``i``.
    """
    _check_index(forest, i)
    X, single = _as_matrix(forest, x)
    mask = forest.oob_mask[:, i]
    if not mask.any():
        return None if single else np.full(X.shape[0], np.nan)
    out = _clip(forest, tree_outputs(forest, X)[mask].mean(axis=0))
    return float(out[0]) if single else out


def oob_matrix(forest: Forest, X, outputs: np.ndarray | None = None) -> np.ndarray:
    """(n, m) matrix whose entry (i, t) is the out-of-bag prediction for ``i`` at ``X[t]``.

    Rows with ``B_i = 0`` are NaN. ``outputs`` may pass precomputed
    :func:`tree_outputs` to avoid re-evaluating the trees.
    """
    if outputs is None:
        outputs = tree_outputs(forest, X)
    mask = forest.oob_mask.astype(np.float64)
    counts = forest.n_oob
    sums = mask.T @ outputs
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts[:, None]
    out[counts == 0] = np.nan
    return _clip(forest, out)


def oob_predictions(forest: Forest, data: Dataset) -> np.ndarray:
    """Out-of-bag prediction of each training point at its own features (NaN if undefined)."""
    if data.n != forest.n_train:
        raise ForestError(
            f"forest was fit on {forest.n_train} rows, dataset has {data.n}"
        )
    X, _ = _as_matrix(forest, data.features)
    outputs = tree_outputs(forest, X)
    mask = forest.oob_mask
    counts = forest.n_oob
    sums = (outputs * mask).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts
    out[counts == 0] = np.nan
    return _clip(forest, out)


# -- serialization --------------------------------------------------------------

_ARRAYS = ("feature", "threshold", "left", "right", "value", "offsets", "bags")
_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def save_forest(forest: Forest, path) -> None:
    """Write a forest as a zip of ``.npy`` members plus a JSON header.

    Member timestamps are fixed, so equal forests give byte-identical files.
    """
    meta = {
        "format": "rfstab-forest",
        "version": FORMAT_VERSION,
        "config": asdict(forest.config),
        "n_features": forest.n_features,
        "train_response_range": list(forest.train_response_range),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", _FIXED_TIME), json.dumps(meta, sort_keys=True))
        for name in _ARRAYS:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(getattr(forest, name)), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", _FIXED_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_forest(path) -> Forest:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "rfstab-forest":
            raise ForestError(f"{path} is not a forest file")
        if meta.get("version") != FORMAT_VERSION:
            raise ForestError(f"unsupported forest file version {meta.get('version')}")
        arrays = {
            name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
            for name in _ARRAYS
        }
    return Forest(
        **arrays,
        config=ForestConfig(**meta["config"]),
        n_features=meta["n_features"],
        train_response_range=tuple(meta["train_response_range"]),
    )
