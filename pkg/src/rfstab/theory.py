"""Closed-form stability quantities for bootstrap-bagged forests.

Notation used throughout: ``n`` training points, ``B`` trees, ``p`` the
probability that a fixed index lands in a size-``n`` bootstrap bag, ``q``
minus the covariance of two indices' inclusion indicators, and
``E = E[max_i Y_i^2]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.special import digamma

EULER_GAMMA = 0.5772156649015329


class VacuousBudgetError(ValueError):
    """The requested stability budget carries no information (nu_2 >= 1)."""

    def __init__(self, nu2: float):
        self.nu2 = nu2
        super().__init__(f"stability budget is vacuous: nu2 = {nu2:.6g} >= 1")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def inclusion_prob(n: int) -> float:
    """``p = 1 - (1 - 1/n)^n``."""
    _require(n >= 1, f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - 1.0 / n) ** n


def neg_cov(n: int) -> float:
    """``q = (1 - 1/n)^(2n) - (1 - 2/n)^n``."""
    _require(n >= 2, f"n must be >= 2, got {n}")
    return (1.0 - 1.0 / n) ** (2 * n) - (1.0 - 2.0 / n) ** n


def eta(n: int) -> float:
    """``p/(1-p) + q/(1-p)^2``; below 16/e for every n >= 2."""
    _require(n >= 2, f"n must be >= 2, got {n}")
    p = inclusion_prob(n)
    q = neg_cov(n)
    return p / (1.0 - p) + q / (1.0 - p) ** 2


def conditional_delta(z_max_sq: float, epsilon: float, n: int) -> float:
    """Fraction bound for the derandomized forest at fixed data and test point."""
    _require(epsilon > 0, "epsilon must be positive")
    _require(z_max_sq >= 0, "z_max_sq must be non-negative")
    return z_max_sq * eta(n) / (epsilon**2 * n)


def derandomized_nu(expected_max_sq: float, epsilon: float, n: int) -> float:
    """Stability probability bound ``E eta / (epsilon^2 n)`` of the derandomized forest."""
    return conditional_delta(expected_max_sq, epsilon, n)


def mean_difference_bound(expected_max_sq: float, n: int) -> float:
    """Upper bound ``2 sqrt(E eta / n)`` on the mean forest/OOB difference."""
    _require(expected_max_sq >= 0, "expected_max_sq must be non-negative")
    return 2.0 * math.sqrt(expected_max_sq * eta(n) / n)


def g(p: float, delta: float, B: int) -> float:
    """``2 (p + (1-p) delta^(1/B))^B``, decreasing in ``B`` towards ``2 delta^(1-p)``."""
    _require(0 < p < 1, f"p must lie in (0, 1), got {p}")
    _require(0 < delta < 1, f"delta must lie in (0, 1), got {delta}")
    _require(B >= 1, f"B must be >= 1, got {B}")
    return 2.0 * (p + (1.0 - p) * delta ** (1.0 / B)) ** B


@dataclass(frozen=True)
class StabilityBudget:
    """The three (epsilon, nu) pieces of a finite-B stability statement and their sums.

    ``vacuous`` is set when the total probability budget reaches 1, i.e.
    the statement says nothing.
    """

    eps1: float
    eps2: float
    eps3: float
    nu1: float
    nu2: float
    nu3: float
    eps_total: float
    nu_total: float
    inputs: dict

    @property
    def vacuous(self) -> bool:
        return self.nu_total >= 1.0 or not math.isfinite(self.eps_total)

    def coverage_slack(self) -> float:
        """``nu1 + 2 sqrt(nu2) + 2 sqrt(nu3)``, the coverage loss in the interval bounds."""
        return self.nu1 + 2.0 * math.sqrt(self.nu2) + 2.0 * math.sqrt(self.nu3)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["vacuous"] = self.vacuous
        out["coverage_slack"] = self.coverage_slack()
        return out


def stability_budget(
    expected_max_sq: float,
    n: int,
    B: int,
    eps2: float,
    lam: float,
    tail_prob: float,
) -> StabilityBudget:
    """Assemble the finite-B budget from ``E``, ``eps2``, ``lambda`` and the tail term.

    ``tail_prob`` stands for ``P(max_i Y_i^2 > lambda E)``; pass 0 with
    ``expected_max_sq = M^2`` for responses bounded by ``M``.

    Raises
    ------
    VacuousBudgetError
        If ``nu2 = lambda E eta / (eps2^2 n)`` is not below 1.
    """
    _require(expected_max_sq > 0, "expected_max_sq must be positive")
    _require(eps2 > 0, "eps2 must be positive")
    _require(lam > 1, "lambda must exceed 1")
    _require(0 <= tail_prob <= 1, "tail_prob must lie in [0, 1]")
    _require(B >= 1, "B must be >= 1")
    nu2 = lam * derandomized_nu(expected_max_sq, eps2, n)
    if nu2 >= 1.0:
        raise VacuousBudgetError(nu2)
    eps1 = math.sqrt(2.0 * lam * expected_max_sq * math.log(1.0 / nu2) / B)
    eps3 = eps1
    nu1 = 2.0 * nu2 + 2.0 * tail_prob
    nu3 = g(inclusion_prob(n), nu2, B) + 2.0 * tail_prob
    return StabilityBudget(
        eps1=eps1,
        eps2=eps2,
        eps3=eps3,
        nu1=nu1,
        nu2=nu2,
        nu3=nu3,
        eps_total=eps1 + eps2 + eps3,
        nu_total=nu1 + nu2 + nu3,
        inputs={
            "n": n,
            "B": B,
            "lambda": lam,
            "expected_max_sq": expected_max_sq,
            "tail_prob": tail_prob,
        },
    )


def maximal_inequality_bound(sigma_sq: float, c: float, n: int) -> float:
    """``sqrt(2 sigma^2 ln n) + c ln n``, an upper bound on ``E[max Y^2]`` for sub-gamma ``Y^2``."""
    return math.sqrt(2.0 * sigma_sq * math.log(n)) + c * math.log(n)


def _bisect_increasing(fn: Callable[[float], float], target: float, tol: float = 1e-10) -> float:
    """Root of ``fn(t) = target`` for increasing ``fn`` with ``fn(0) < target``."""
    lo, hi = 0.0, 1.0
    while fn(hi) < target:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def subgamma_tail_bound(
    sigma_sq: float,
    c: float,
    mean_y2: float,
    n: int,
    lam: float,
    expected_max_sq: float | None = None,
) -> float:
    """Union-bound estimate of ``P(max_i Y_i^2 > lambda E)`` for sub-gamma ``Y^2``.

    Solves ``sqrt(2 sigma^2 t) + c t + mean_y2 = lambda E`` for ``t`` by
    bisection (bracket doubled until it straddles the root) and returns
    ``min(1, n exp(-t))``. ``E`` defaults to :func:`maximal_inequality_bound`.
    Returns 1 when there is no positive root.
    """
    _require(sigma_sq > 0 and c > 0, "sigma_sq and c must be positive")
    _require(mean_y2 >= 0, "mean_y2 must be non-negative")
    _require(n >= 2, "n must be >= 2")
    _require(lam > 1, "lambda must exceed 1")
    if expected_max_sq is None:
        expected_max_sq = maximal_inequality_bound(sigma_sq, c, n)
    target = lam * expected_max_sq
    if target <= mean_y2:
        return 1.0

    def lhs(t: float) -> float:
        return math.sqrt(2.0 * sigma_sq * t) + c * t + mean_y2

    t_star = _bisect_increasing(lhs, target)
    return min(1.0, math.exp(math.log(n) - t_star))


def harmonic_expected_max(n: int) -> float:
    """``H_n = sum_{i<=n} 1/i``, which is ``E[max Y_i^2]`` when ``Y^2 ~ Exp(1)``.

    Computed as ``digamma(n + 1) + gamma``, accurate to a few ulps.
    """
    _require(n >= 1, f"n must be >= 1, got {n}")
    return float(digamma(n + 1)) + EULER_GAMMA


def estimate_expected_max_sq(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    reps: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of ``max_i Y_i^2`` over ``reps`` samples of size ``n``.

    ``sampler(rng, size)`` must return ``size`` draws of ``Y``.
    """
    _require(n >= 2, "n must be >= 2")
    _require(reps >= 1, "reps must be >= 1")
    rng = np.random.default_rng(seed)
    maxima = np.empty(reps)
    for r in range(reps):
        y = np.asarray(sampler(rng, n), dtype=np.float64)
        maxima[r] = np.max(y * y)
    if reps == 1:
        return float(maxima[0]), 0.0
    return float(maxima.mean()), float(maxima.std(ddof=1) / math.sqrt(reps))


def power_schedule(kappa: float, scale: float = 1.0) -> Callable[[int], float]:
    """``n -> scale * n^kappa``, for parameters that grow with ``n``."""
    return lambda n: scale * n**kappa


EXPECTED_MAX_SCALINGS = {
    "bounded": lambda n: 1.0,
    "sqrtlog": lambda n: math.sqrt(math.log(n)),
    "log": math.log,
    "harmonic": harmonic_expected_max,
    "power": lambda n: n**0.25,
}


def budget_sweep(
    ns,
    Bs,
    expected_max_sq: Callable[[int], float],
    eps2: Callable[[int], float],
    lam: Callable[[int], float],
    tail_prob: Callable[[int], float] = lambda n: 0.0,
) -> list[dict]:
    """Evaluate :func:`stability_budget` on an ``(n, B)`` grid.

    Every parameter is a function of ``n``, so growing-``lambda`` regimes
    use the same formulas as the fixed ones. Vacuous cells are reported
    with ``vacuous=True`` and NaN entries.
    """
    rows = []
    for n in ns:
        for B in Bs:
            E = expected_max_sq(n)
            row = {"n": n, "B": B, "expected_max_sq": E, "lambda": lam(n), "eps2": eps2(n)}
            try:
                budget = stability_budget(E, n, B, eps2(n), lam(n), tail_prob(n))
            except VacuousBudgetError as err:
                row.update(
                    eps1=math.nan, eps3=math.nan, nu1=math.nan, nu2=err.nu2, nu3=math.nan,
                    eps_total=math.nan, nu_total=math.nan, vacuous=True,
                )
            else:
                row.update(
                    eps1=budget.eps1, eps3=budget.eps3, nu1=budget.nu1, nu2=budget.nu2,
                    nu3=budget.nu3, eps_total=budget.eps_total, nu_total=budget.nu_total,
                    vacuous=budget.vacuous,
                )
            rows.append(row)
    return rows
