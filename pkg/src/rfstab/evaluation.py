"""Monte-Carlo coverage experiments for the interval methods.

Each replication draws a fresh training and test sample, fits one forest,
and scores every requested interval method on every test point. The
report is built only from integer hit counts, so a fixed seed reproduces
it exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import GENERATORS, Dataset, load_csv
from .forest import ForestConfig, fit, oob_matrix, predict, tree_outputs
from .intervals import (
    Method,
    loo_forests,
    loo_residuals,
    lower_quantile_columns,
    oob_residuals,
    upper_quantile,
    upper_quantile_columns,
)
from .theory import StabilityBudget, VacuousBudgetError, stability_budget

SCHEMA_VERSION = 1
LOO_METHODS = {Method.JPLUS, Method.JS}


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One coverage experiment.

    ``generator`` is ``"light_tail"``, ``"cauchy"`` or ``"csv"`` (then
    ``csv_path`` and ``response_column`` are required). ``epsilon`` is the
    stability margin for the inflated, deflated and JS intervals; when a
    ``budget`` dict (``expected_max_sq``, ``eps2``, ``lambda``,
    ``tail_prob``) is given and non-vacuous, its total epsilon replaces it.
    """

    generator: str = "light_tail"
    n_train: int = 200
    n_test: int = 200
    forest: ForestConfig = field(default_factory=ForestConfig)
    alpha: float = 0.1
    epsilon: float = 0.0
    methods: tuple[Method, ...] = (Method.JAB,)
    reps: int = 50
    seed: int = 0
    csv_path: str | None = None
    response_column: str | None = None
    budget: dict | None = None
    max_loo_train: int = 300

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if isinstance(self.forest, dict):
            object.__setattr__(self, "forest", ForestConfig(**self.forest))

    def validate(self) -> None:
        if self.reps < 1:
            raise ExperimentError("reps must be at least 1")
        if self.n_train < 2 or self.n_test < 1:
            raise ExperimentError("need n_train >= 2 and n_test >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ExperimentError("alpha must lie in (0, 1)")
        if not self.methods:
            raise ExperimentError("no methods requested")
        if self.generator == "csv":
            if not self.csv_path or not self.response_column:
                raise ExperimentError("csv generator needs csv_path and response_column")
        elif self.generator not in GENERATORS:
            raise ExperimentError(f"unknown generator {self.generator!r}")
        if LOO_METHODS & set(self.methods) and self.n_train > self.max_loo_train:
            raise ExperimentError(
                f"leave-one-out methods refit n_train={self.n_train} forests per rep; "
                f"raise max_loo_train (currently {self.max_loo_train}) to allow this"
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = [m.value for m in self.methods]
        out["schema_version"] = SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ExperimentError(f"unsupported experiment schema version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ExperimentError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MethodSummary:
    coverage: float
    mean_width: float
    median_width: float
    miss_count: int
    tie_count: int
    dropped_oob: int
    hits: int
    total: int
    rep_coverages: list[float]

    @property
    def std_error(self) -> float:
        """Standard error of the coverage from the spread across replications."""
        r = np.asarray(self.rep_coverages)
        if r.size < 2:
            return self.binomial_std_error
        return float(r.std(ddof=1) / math.sqrt(r.size))

    @property
    def binomial_std_error(self) -> float:
        c = self.coverage
        return math.sqrt(c * (1 - c) / self.total)


@dataclass
class CoverageReport:
    methods: dict[str, MethodSummary]
    reps: list[dict]
    config: dict
    epsilon_used: float
    budget: dict | None = None

    def __getitem__(self, method) -> MethodSummary:
        return self.methods[Method(method).value]

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "epsilon_used": self.epsilon_used,
            "budget": self.budget,
            "methods": {},
            "reps": self.reps,
        }
        for name, s in self.methods.items():
            d = asdict(s)
            d["std_error"] = s.std_error
            out["methods"][name] = d
        return out

    def flat_rows(self) -> list[dict]:
        """One row per (rep, method) for CSV export."""
        rows = []
        for rec in self.reps:
            for name, m in rec["methods"].items():
                rows.append({"rep": rec["rep"], "method": name, **m})
        return rows


@dataclass
class _MethodBounds:
    lower: np.ndarray
    upper: np.ndarray
    empty: np.ndarray
    ties: int = 0


def _draw(config: ExperimentConfig, seq: np.random.SeedSequence, pool: Dataset | None):
    data_seed = int(seq.generate_state(1)[0])
    total = config.n_train + config.n_test
    if pool is None:
        data = GENERATORS[config.generator](total, data_seed)
    else:
        if pool.n < total:
            raise ExperimentError(f"{pool.n} rows cannot supply {total} train+test points")
        data = pool.subset(np.random.default_rng(data_seed).permutation(pool.n)[:total])
    return data.subset(np.arange(config.n_train)), data.subset(np.arange(config.n_train, total))


def _centered(centers: np.ndarray, radius: float) -> _MethodBounds:
    m = centers.size
    if radius < 0:
        return _MethodBounds(centers.copy(), centers.copy(), np.ones(m, dtype=bool))
    if math.isinf(radius):
        return _MethodBounds(np.full(m, -np.inf), np.full(m, np.inf), np.zeros(m, dtype=bool))
    return _MethodBounds(centers - radius, centers + radius, np.zeros(m, dtype=bool))


def _plus(preds: np.ndarray, res: np.ndarray, alpha: float) -> _MethodBounds:
    lo = lower_quantile_columns(preds - res[:, None], alpha)
    hi = upper_quantile_columns(preds + res[:, None], alpha)
    empty = lo > hi
    return _MethodBounds(np.where(empty, 0.5 * (lo + hi), lo), np.where(empty, 0.5 * (lo + hi), hi), empty)


def interval_bounds(
    config: ExperimentConfig,
    train: Dataset,
    test_X: np.ndarray,
    epsilon: float,
    n_jobs: int = 1,
) -> tuple[dict[Method, _MethodBounds], int]:
    """Fit one forest and compute every requested method's interval at each test row."""
    forest = fit(train, config.forest, n_jobs=n_jobs)
    outputs = tree_outputs(forest, test_X)
    lo_y, hi_y = forest.train_response_range
    centers = np.clip(outputs.mean(axis=0), lo_y, hi_y)
    res = oob_residuals(forest, train)
    eps = abs(epsilon)
    alpha = config.alpha
    out: dict[Method, _MethodBounds] = {}

    for method in config.methods:
        if method in (Method.JAB, Method.JABS_PLUS, Method.JABS_MINUS):
            shift = {Method.JAB: 0.0, Method.JABS_PLUS: eps, Method.JABS_MINUS: -eps}[method]
            bounds = _centered(centers, upper_quantile(res.values + shift, alpha))
            bounds.ties = res.tie_count
        elif method is Method.JPLUS_AB:
            oob = oob_matrix(forest, test_X, outputs=outputs)[res.indices]
            bounds = _plus(oob, res.values, alpha)
            bounds.ties = res.tie_count
        else:
            continue
        out[method] = bounds

    if LOO_METHODS & set(config.methods):
        refits = loo_forests(train, config.forest, n_jobs=n_jobs)
        loo = loo_residuals(refits, train)
        if Method.JS in config.methods:
            out[Method.JS] = _centered(centers, upper_quantile(loo.values + eps, alpha))
            out[Method.JS].ties = loo.tie_count
        if Method.JPLUS in config.methods:
            preds = np.stack([predict(f, test_X) for f in refits])
            out[Method.JPLUS] = _plus(preds, loo.values, alpha)
            out[Method.JPLUS].ties = loo.tie_count
    return out, res.dropped


def _resolve_budget(config: ExperimentConfig) -> tuple[float, dict | None]:
    if not config.budget:
        return config.epsilon, None
    b = config.budget
    try:
        budget = stability_budget(
            b["expected_max_sq"], config.n_train, config.forest.n_trees,
            b["eps2"], b["lambda"], b.get("tail_prob", 0.0),
        )
    except VacuousBudgetError as err:
        return config.epsilon, {"vacuous": True, "nu2": err.nu2}
    info = budget.to_dict()
    if budget.vacuous:
        return config.epsilon, info
    return budget.eps_total, info


def run_coverage(config: ExperimentConfig, n_jobs: int = 1) -> CoverageReport:
    """Estimate coverage and width of every requested method over ``config.reps`` replications.

    Infinite intervals count as covering. Their width is infinite, which
    makes ``mean_width`` infinite; ``median_width`` uses finite widths only.
    """
    config.validate()
    pool = None
    if config.generator == "csv":
        pool = load_csv(config.csv_path, config.response_column)
    epsilon, budget_info = _resolve_budget(config)

    hits = {m: 0 for m in config.methods}
    ties = {m: 0 for m in config.methods}
    widths = {m: [] for m in config.methods}
    rep_cov = {m: [] for m in config.methods}
    dropped_total = 0
    records = []
    for r, seq in enumerate(np.random.SeedSequence(config.seed).spawn(config.reps)):
        data_seq, forest_seq = seq.spawn(2)
        train, test = _draw(config, data_seq, pool)
        forest_seed = int(forest_seq.generate_state(1)[0])
        rep_config = replace(config, forest=replace(config.forest, seed=forest_seed))
        bounds, dropped = interval_bounds(rep_config, train, test.features, epsilon, n_jobs)
        dropped_total += dropped
        y = test.response
        rec = {"rep": r, "forest_seed": forest_seed, "dropped_oob": dropped, "methods": {}}
        for m in config.methods:
            b = bounds[m]
            covered = ~b.empty & (b.lower <= y) & (y <= b.upper)
            w = np.where(b.empty, 0.0, b.upper - b.lower)
            h = int(covered.sum())
            hits[m] += h
            ties[m] += b.ties
            widths[m].append(w)
            rep_cov[m].append(h / y.size)
            rec["methods"][m.value] = {
                "hits": h,
                "n_test": int(y.size),
                "mean_width": float(w.mean()),
                "empty": int(b.empty.sum()),
                "ties": b.ties,
            }
        records.append(rec)

    total = config.reps * config.n_test
    summaries = {}
    for m in config.methods:
        w = np.concatenate(widths[m])
        finite = w[np.isfinite(w)]
        summaries[m.value] = MethodSummary(
            coverage=hits[m] / total,
            mean_width=float(w.mean()),
            median_width=float(np.median(finite)) if finite.size else math.inf,
            miss_count=total - hits[m],
            tie_count=ties[m],
            dropped_oob=dropped_total,
            hits=hits[m],
            total=total,
            rep_coverages=rep_cov[m],
        )
    return CoverageReport(summaries, records, config.to_dict(), epsilon, budget_info)


def coverage_trend(config: ExperimentConfig, n_grid, method=Method.JAB, n_jobs: int = 1) -> list[dict]:
    """Coverage of ``method`` at each training size in ``n_grid`` (all else from ``config``)."""
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ExperimentError("n_grid must be strictly increasing")
    method = Method(method)
    methods = config.methods if method in config.methods else (*config.methods, method)
    target = 1.0 - config.alpha
    rows = []
    for n in n_grid:
        report = run_coverage(replace(config, n_train=n, methods=methods), n_jobs=n_jobs)
        s = report[method]
        rows.append(
            {
                "n_train": n,
                "coverage": s.coverage,
                "std_error": s.std_error,
                "binomial_std_error": s.binomial_std_error,
                "abs_gap": abs(s.coverage - target),
            }
        )
    return rows


def trend_is_non_increasing(rows: list[dict], z: float = 2.0) -> bool:
    """True if each ``abs_gap`` exceeds its predecessor by at most ``z`` combined standard errors."""
    for a, b in zip(rows, rows[1:]):
        slack = z * math.hypot(a["std_error"], b["std_error"])
        if b["abs_gap"] > a["abs_gap"] + slack:
            return False
    return True


class EmpiricalCDF:
    """Right-continuous empirical CDF of a sample."""

    def __init__(self, errors):
        v = np.sort(np.asarray(errors, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValueError("empirical CDF of an empty sample")
        self.sorted = v

    def __call__(self, t):
        out = np.searchsorted(self.sorted, t, side="right") / self.sorted.size
        return float(out) if np.ndim(out) == 0 else out


def empirical_cdf(errors) -> EmpiricalCDF:
    return EmpiricalCDF(errors)


def check_coverage_bounds(report: CoverageReport, z: float = 3.0) -> dict:
    """Compare observed coverage with the finite-sample bounds.

    Each entry has ``status`` in ``{"pass", "fail", "not applicable",
    "skipped"}``. The stability-based bounds need a non-vacuous budget in
    the report; the deflated upper bound is skipped when residual ties
    occurred, since it assumes none.
    """
    cfg = report.config
    alpha = cfg["alpha"]
    n = cfg["n_train"]
    out = {}
    budget = report.budget
    usable = budget is not None and not budget.get("vacuous", True)

    if Method.JABS_PLUS.value in report.methods:
        s = report.methods[Method.JABS_PLUS.value]
        if not usable:
            out["inflated_lower_bound"] = {"status": "not applicable", "reason": "no usable stability budget"}
        else:
            bound = 1 - alpha - budget["coverage_slack"] - z * s.std_error
            out["inflated_lower_bound"] = {
                "status": "pass" if s.coverage >= bound else "fail",
                "bound": bound,
                "observed": s.coverage,
            }
    if Method.JABS_MINUS.value in report.methods:
        s = report.methods[Method.JABS_MINUS.value]
        if not usable:
            out["deflated_upper_bound"] = {"status": "not applicable", "reason": "no usable stability budget"}
        elif s.tie_count:
            out["deflated_upper_bound"] = {"status": "skipped", "reason": f"{s.tie_count} residual ties"}
        else:
            bound = 1 - alpha + 1 / (n + 1) + budget["coverage_slack"] + z * s.std_error
            out["deflated_upper_bound"] = {
                "status": "pass" if s.coverage <= bound else "fail",
                "bound": bound,
                "observed": s.coverage,
            }
    for m in (Method.JPLUS, Method.JPLUS_AB):
        if m.value in report.methods:
            s = report.methods[m.value]
            bound = 1 - 2 * alpha - z * s.std_error
            out[f"{m.value}_lower_bound"] = {
                "status": "pass" if s.coverage >= bound else "fail",
                "bound": bound,
                "observed": s.coverage,
            }
    return out
