"""Order-statistic quantiles, residual sets, and jackknife-family prediction intervals.

Quantile conventions for ``n`` values at level ``alpha``:

========================  =====================================  ==========
function                  order statistic                        past range
========================  =====================================  ==========
:func:`upper_quantile`    ``ceil((1 - alpha)(n + 1))``-th        ``+inf``
:func:`lower_quantile`    ``floor(alpha (n + 1))``-th            ``-inf``
:func:`n_quantile`        ``ceil((1 - alpha) n)``-th             never
========================  =====================================  ==========

Index arithmetic is done in exact decimal on the shortest repr of
``alpha``, so that e.g. ``alpha=0.4, n=4`` gives index 3 and not the 4
that binary rounding of ``0.6 * 5`` could produce.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .dataset import Dataset
from .forest import Forest, ForestConfig, fit_loo, oob_predictions, predict


class Method(str, enum.Enum):
    JABS_PLUS = "jabs_plus"
    JABS_MINUS = "jabs_minus"
    JAB = "jab"
    JPLUS = "jplus"
    JPLUS_AB = "jplus_ab"
    JS = "js"


def _dec(alpha: float) -> Decimal:
    a = float(alpha)
    if not 0.0 < a < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return Decimal(repr(a))


def upper_index(n: int, alpha: float) -> int:
    """``ceil((1 - alpha)(n + 1))``; equals ``n + 1`` when the quantile is infinite."""
    k = math.ceil((1 - _dec(alpha)) * (n + 1))
    return max(k, 1)


def lower_index(n: int, alpha: float) -> int:
    """``floor(alpha (n + 1))``; zero means the quantile is ``-inf``."""
    return math.floor(_dec(alpha) * (n + 1))


def n_index(n: int, alpha: float) -> int:
    """``ceil((1 - alpha) n)``, never below 1."""
    return max(math.ceil((1 - _dec(alpha)) * n), 1)


def _values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("quantile of an empty set")
    return v


def _kth(v: np.ndarray, k: int) -> float:
    return float(np.partition(v, k - 1)[k - 1])


def upper_quantile(values, alpha: float) -> float:
    """The ``ceil((1-alpha)(n+1))``-th smallest value, ``+inf`` past the end."""
    v = _values(values)
    k = upper_index(v.size, alpha)
    return math.inf if k > v.size else _kth(v, k)


def lower_quantile(values, alpha: float) -> float:
    """The ``floor(alpha(n+1))``-th smallest value, ``-inf`` when the index is 0."""
    v = _values(values)
    k = lower_index(v.size, alpha)
    return -math.inf if k < 1 else _kth(v, min(k, v.size))


def n_quantile(values, alpha: float) -> float:
    """The ``ceil((1-alpha)n)``-th smallest value."""
    v = _values(values)
    return _kth(v, n_index(v.size, alpha))


def upper_quantile_columns(M: np.ndarray, alpha: float) -> np.ndarray:
    """:func:`upper_quantile` of every column of ``M``."""
    n = M.shape[0]
    k = upper_index(n, alpha)
    if k > n:
        return np.full(M.shape[1], np.inf)
    return np.partition(M, k - 1, axis=0)[k - 1]


def lower_quantile_columns(M: np.ndarray, alpha: float) -> np.ndarray:
    """:func:`lower_quantile` of every column of ``M``."""
    n = M.shape[0]
    k = lower_index(n, alpha)
    if k < 1:
        return np.full(M.shape[1], -np.inf)
    k = min(k, n)
    return np.partition(M, k - 1, axis=0)[k - 1]


@dataclass(frozen=True)
class PredictionInterval:
    """A closed interval ``[lower, upper]`` for one test point.

    ``empty`` marks a deflated interval whose radius went negative; it
    covers nothing and is stored as the degenerate point ``[center, center]``.
    """

    lower: float
    upper: float
    method: Method
    alpha: float
    epsilon: float = 0.0
    empty: bool = False

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")

    def contains(self, y: float) -> bool:
        return not self.empty and self.lower <= y <= self.upper

    @property
    def width(self) -> float:
        return 0.0 if self.empty else self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "method": self.method.value,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "empty": self.empty,
        }


@dataclass(frozen=True)
class ResidualSet:
    """Absolute residuals of training points, with undefined entries removed.

    ``indices`` are the training rows the values belong to.
    """

    values: np.ndarray
    source: str
    dropped: int = 0
    indices: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not (np.isfinite(v).all() and (v >= 0).all()):
            raise ValueError("residuals must be finite and non-negative")
        object.__setattr__(self, "values", v)
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(v.size))

    def __len__(self) -> int:
        return self.values.size

    @property
    def tie_count(self) -> int:
        """Number of values that repeat an earlier one."""
        return int(self.values.size - np.unique(self.values).size)


def oob_residuals(forest: Forest, train: Dataset) -> ResidualSet:
    """``|Y_i - OOB_i(X_i)|`` for every training point with a defined OOB prediction."""
    preds = oob_predictions(forest, train)
    defined = np.isfinite(preds)
    idx = np.flatnonzero(defined)
    return ResidualSet(
        np.abs(train.response[idx] - preds[idx]),
        source="oob",
        dropped=int((~defined).sum()),
        indices=idx,
    )


def loo_forests(data: Dataset, config: ForestConfig, n_jobs: int = 1) -> list[Forest]:
    """All ``n`` leave-one-out refits; costs ``n`` full forest fits."""
    return [fit_loo(data, config, i, n_jobs=n_jobs) for i in range(data.n)]


def loo_residuals(forests: list[Forest], data: Dataset) -> ResidualSet:
    """``|Y_i - LOO_i(X_i)|`` from the refits returned by :func:`loo_forests`."""
    if len(forests) != data.n:
        raise ValueError(f"{len(forests)} refits for {data.n} rows")
    preds = np.array([predict(f, data.features[i]) for i, f in enumerate(forests)])
    return ResidualSet(np.abs(data.response - preds), source="loo")


def _residual_array(residuals) -> np.ndarray:
    values = residuals.values if isinstance(residuals, ResidualSet) else residuals
    return _values(values)


def jabs_interval(
    center: float,
    residuals,
    alpha: float,
    epsilon: float = 0.0,
    convention: str = "n+1",
) -> PredictionInterval:
    """``center +/- q{R_i + epsilon}``.

    A positive ``epsilon`` inflates the residuals, a negative one deflates
    them, and zero gives the plain jackknife-after-bootstrap interval.
    ``convention="n"`` swaps in :func:`n_quantile` for the radius.
    """
    r = _residual_array(residuals) + epsilon
    if convention == "n+1":
        radius = upper_quantile(r, alpha)
    elif convention == "n":
        radius = n_quantile(r, alpha)
    else:
        raise ValueError(f"unknown quantile convention {convention!r}")
    if epsilon > 0:
        method = Method.JABS_PLUS
    elif epsilon < 0:
        method = Method.JABS_MINUS
    else:
        method = Method.JAB
    return _centered(center, radius, method, alpha, abs(epsilon))


def _centered(center, radius, method, alpha, epsilon) -> PredictionInterval:
    if radius < 0:
        return PredictionInterval(center, center, method, alpha, epsilon, empty=True)
    if math.isinf(radius):
        return PredictionInterval(-math.inf, math.inf, method, alpha, epsilon)
    return PredictionInterval(center - radius, center + radius, method, alpha, epsilon)


def js_interval(center: float, loo_residuals, alpha: float, epsilon: float = 0.0) -> PredictionInterval:
    """``center +/- q{R_i^LOO + epsilon}`` with ``epsilon >= 0``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative for the JS interval")
    r = _residual_array(loo_residuals) + epsilon
    return _centered(center, upper_quantile(r, alpha), Method.JS, alpha, epsilon)


def _plus_interval(preds, residuals, alpha, method) -> PredictionInterval:
    m = np.asarray(preds, dtype=np.float64).ravel()
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if m.shape != r.shape:
        raise ValueError(f"{m.size} predictions but {r.size} residuals")
    if m.size == 0:
        raise ValueError("empty input")
    lo = lower_quantile(m - r, alpha)
    hi = upper_quantile(m + r, alpha)
    if lo > hi:
        mid = 0.5 * (lo + hi)
        return PredictionInterval(mid, mid, method, alpha, empty=True)
    return PredictionInterval(lo, hi, method, alpha)


def jplus_interval(loo_preds_at_x, loo_residuals, alpha: float) -> PredictionInterval:
    """``[q-{m_i - R_i}, q+{m_i + R_i}]`` with ``m_i`` the leave-one-out predictions at ``x``."""
    return _plus_interval(loo_preds_at_x, _residual_array(loo_residuals), alpha, Method.JPLUS)


def jplus_ab_interval(oob_preds_at_x, oob_residuals, alpha: float) -> PredictionInterval:
    """Jackknife+ built from out-of-bag predictions at ``x``.

    ``oob_preds_at_x`` has one entry per training row (NaN where
    undefined). Only rows defined on both sides are used.
    """
    preds = np.asarray(oob_preds_at_x, dtype=np.float64).ravel()
    if isinstance(oob_residuals, ResidualSet):
        preds = preds[oob_residuals.indices]
        res = oob_residuals.values
    else:
        res = np.asarray(oob_residuals, dtype=np.float64).ravel()
        if res.shape != preds.shape:
            raise ValueError(f"{preds.size} predictions but {res.size} residuals")
    keep = np.isfinite(preds) & np.isfinite(res)
    if not keep.any():
        raise ValueError("no aligned out-of-bag entries")
    return _plus_interval(preds[keep], res[keep], alpha, Method.JPLUS_AB)


def quantile_comparison_check(a, b, epsilon: float, alpha: float, delta_alpha: float) -> bool:
    """Check the pairing bound between quantiles of two equal-length samples.

    If ``q_alpha{b} > q_{alpha - delta_alpha}{a} + epsilon`` then at least
    ``(n + 1) delta_alpha`` pairs must have ``b_i > a_i + epsilon``. Returns
    whether that implication holds on the inputs (True when the premise fails).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("a and b must have the same length")
    if delta_alpha < 0:
        raise ValueError("delta_alpha must be non-negative")
    shifted = a + epsilon
    if alpha - delta_alpha <= 0:
        # the comparison quantile is +inf, so the premise cannot hold
        return True
    if not upper_quantile(b, alpha) > upper_quantile(shifted, alpha - delta_alpha):
        return True
    count = int(np.count_nonzero(b > shifted))
    return count >= (a.size + 1) * delta_alpha


def rank_coverage_probability(n: int, alpha: float) -> float:
    """Exact ``P(r_{n+1} <= q_alpha{r_1..r_n})`` for exchangeable, tie-free draws."""
    return min(upper_index(n, alpha), n + 1) / (n + 1)
