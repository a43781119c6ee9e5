"""Command-line entry point: ``rfstab <command> [options]``.

Every command that writes files also writes a run manifest (JSON) listing
each output with its sha256, written after all other outputs. Exit status
is 0 on success, 1 when the computation fails and 2 on a usage error;
failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import dataset, evaluation, forest, intervals, stability, theory

INTERVAL_METHODS = ("jabs", "jab", "jplus", "jplusab", "js")
DIFFERENCE_SAMPLE_CAP = 100_000


class UsageError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    """Deterministic JSON; non-finite floats become the strings ``inf``, ``-inf``, ``nan``."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    tool_version: str = field(default_factory=tool_version)
    artifacts: dict[str, str] = field(default_factory=dict)

    def add(self, path) -> None:
        self.artifacts[str(path)] = sha256_file(path)

    def write(self, path) -> None:
        Path(path).write_text(dumps(asdict(self)), encoding="utf-8")


def default_seed() -> int:
    raw = os.environ.get("RF_SEED")
    if raw is None:
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"RF_SEED must be a non-negative integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError(f"RF_SEED must be a non-negative integer, got {raw!r}")
    return seed


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return raw


def _merge(flags: dict, config: dict, defaults: dict) -> dict:
    """Flags beat config entries, which beat defaults; ``None`` flags are unset."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _manifest_path(args, out) -> Path:
    return Path(args.manifest) if args.manifest else Path(f"{out}.manifest.json")


def _write_text(path, text: str, manifest: RunManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    manifest.add(path)


def _write_csv(path, header, rows, manifest: RunManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    manifest.add(path)


# gen


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    data = dataset.GENERATORS[args.generator](args.n, seed)
    manifest = RunManifest("gen", {"generator": args.generator, "n": args.n}, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(out)
    manifest.add(out)
    manifest.write(_manifest_path(args, out))
    return 0


# fit

FOREST_FLAGS = {
    "n_trees": "trees",
    "mtry": "mtry",
    "min_node_size": "min_node",
    "max_depth": "max_depth",
    "seed": "seed",
}


def resolve_forest_config(args) -> forest.ForestConfig:
    raw = _load_json_config(getattr(args, "config", None))
    defaults = {f.name: f.default for f in fields(forest.ForestConfig)}
    defaults["seed"] = default_seed()
    flags = {key: getattr(args, flag) for key, flag in FOREST_FLAGS.items()}
    return forest.ForestConfig(**_merge(flags, raw, defaults))


def cmd_fit(args) -> int:
    config = resolve_forest_config(args)
    data = dataset.load_csv(args.data, args.response)
    model = forest.fit(data, config, n_jobs=args.threads)
    manifest = RunManifest(
        "fit",
        {"data": str(args.data), "response": args.response, "forest": asdict(config)},
        config.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    forest.save_forest(model, out)
    manifest.add(out)
    manifest.write(_manifest_path(args, out))
    return 0


# theory

THEORY_KEYS = ("n", "B", "eps2", "lam", "expected_max_sq", "tail")


def cmd_theory(args) -> int:
    raw = _load_json_config(args.config)
    flags = {k: getattr(args, k) for k in THEORY_KEYS}
    merged = _merge(flags, raw, dict.fromkeys(THEORY_KEYS))
    merged["tail"] = merged["tail"] if merged["tail"] is not None else 0.0
    missing = [k for k, v in merged.items() if v is None]
    if missing:
        raise UsageError(f"missing required values: {', '.join(missing)}")
    try:
        budget = theory.stability_budget(
            merged["expected_max_sq"], int(merged["n"]), int(merged["B"]),
            merged["eps2"], merged["lam"], merged["tail"],
        )
        payload = {"status": "vacuous" if budget.vacuous else "ok", **budget.to_dict()}
    except theory.VacuousBudgetError as err:
        payload = {"status": "vacuous", "nu2": err.nu2, "inputs": merged}
    text = dumps(payload)
    sys.stdout.write(text)
    if args.out:
        manifest = RunManifest("theory", merged, None)
        _write_text(args.out, text, manifest)
        manifest.write(_manifest_path(args, args.out))
    return 0


SWEEP_COLUMNS = (
    "n", "B", "expected_max_sq", "lambda", "eps2", "eps1", "eps3",
    "nu1", "nu2", "nu3", "eps_total", "nu_total", "vacuous",
)


def cmd_theory_sweep(args) -> int:
    scale_e = theory.EXPECTED_MAX_SCALINGS[args.scaling]
    rows = theory.budget_sweep(
        args.ns,
        args.Bs,
        expected_max_sq=lambda n: args.e_scale * scale_e(n),
        eps2=theory.power_schedule(args.eps2_kappa, args.eps2),
        lam=theory.power_schedule(args.lam_kappa, args.lam),
        tail_prob=lambda n: args.tail,
    )
    manifest = RunManifest("theory sweep", {k: v for k, v in vars(args).items() if k != "func"}, None)
    _write_csv(args.out, SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in rows), manifest)
    manifest.write(_manifest_path(args, args.out))
    return 0


# stability


def cmd_stability(args) -> int:
    model = forest.load_forest(args.forest)
    train = dataset.load_csv(args.train, args.response)
    test = dataset.load_csv(args.test, args.response)
    diffs = stability.difference_matrix(model, train, test.features)
    est = stability.estimate_stability(diffs, args.nu_hat)
    held_out = stability.exceedance_fraction(diffs, est.eps_hat)

    oob = intervals.oob_residuals(model, train)
    test_err = np.abs(test.response - forest.predict(model, test.features))
    ks = ks_2samp(oob.values, test_err)

    seed = args.seed if args.seed is not None else default_seed()
    pooled = diffs.values.ravel()
    if pooled.size > args.max_points:
        rng = np.random.default_rng(seed)
        pooled = np.sort(rng.choice(pooled, args.max_points, replace=False))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        "stability",
        {
            "forest": str(args.forest), "train": str(args.train), "test": str(args.test),
            "response": args.response, "nu_hat": args.nu_hat, "max_points": args.max_points,
        },
        seed,
    )
    v = diffs.values
    summary = {
        "n_rows": int(v.shape[0]),
        "n_test": int(v.shape[1]),
        "dropped_indices": diffs.dropped_indices,
        "response_range": diffs.response_range,
        "mean": float(v.mean()),
        "max": float(v.max()),
        "quantiles": {str(q): float(np.quantile(v, q)) for q in (0.5, 0.9, 0.95, 0.99)},
    }
    _write_text(out_dir / "differences_summary.json", dumps(summary), manifest)
    result = {
        **est.to_dict(),
        "exceedance_fraction": held_out,
        "oob_vs_test_error_ks": {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)},
        "oob_dropped": oob.dropped,
    }
    _write_text(out_dir / "stability.json", dumps(result), manifest)

    exports = {
        "differences_density.csv": (pooled, True),
        "oob_error_density.csv": (oob.values, False),
        "test_error_density.csv": (test_err, False),
    }
    for name, (values, log10) in exports.items():
        stability.export_density(values, out_dir / name, log10=log10)
        manifest.add(out_dir / name)
    manifest.write(Path(args.manifest) if args.manifest else out_dir / "manifest.json")
    return 0


# interval


def cmd_interval(args) -> int:
    model = forest.load_forest(args.forest)
    train = dataset.load_csv(args.train, args.response)
    X = dataset.load_features(args.x, drop=args.response)
    if X.shape[1] != model.n_features:
        raise forest.ForestError(f"--x has {X.shape[1]} feature columns, forest expects {model.n_features}")
    method = args.method
    if method in ("jplus", "js"):
        print(
            json.dumps({"warning": f"{method} refits {train.n} leave-one-out forests"}),
            file=sys.stderr,
        )
    if method in ("jabs", "jab"):
        eps = args.epsilon if method == "jabs" else 0.0
        res = intervals.oob_residuals(model, train)
        centers = forest.predict(model, X)
        out = [intervals.jabs_interval(c, res, args.alpha, eps, args.convention) for c in centers]
    elif method == "jplusab":
        res = intervals.oob_residuals(model, train)
        oob = forest.oob_matrix(model, X)
        out = [intervals.jplus_ab_interval(oob[:, t], res, args.alpha) for t in range(X.shape[0])]
    else:
        refits = intervals.loo_forests(train, model.config, n_jobs=args.threads)
        res = intervals.loo_residuals(refits, train)
        if method == "js":
            centers = forest.predict(model, X)
            out = [intervals.js_interval(c, res, args.alpha, abs(args.epsilon)) for c in centers]
        else:
            preds = np.stack([forest.predict(f, X) for f in refits])
            out = [intervals.jplus_interval(preds[:, t], res, args.alpha) for t in range(X.shape[0])]
    payload = {
        "method": method,
        "alpha": args.alpha,
        "epsilon": args.epsilon,
        "residuals": {"source": res.source, "count": len(res), "dropped": res.dropped, "ties": res.tie_count},
        "intervals": [iv.to_dict() for iv in out],
    }
    manifest = RunManifest(
        "interval",
        {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"},
        model.config.seed,
    )
    _write_text(args.out, dumps(payload), manifest)
    manifest.write(_manifest_path(args, args.out))
    return 0


# coverage


def resolve_experiment(args) -> evaluation.ExperimentConfig:
    raw = _load_json_config(args.config)
    if "seed" not in raw:
        raw["seed"] = default_seed()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.reps is not None:
        raw["reps"] = args.reps
    try:
        return evaluation.ExperimentConfig.from_dict(raw)
    except TypeError as err:
        raise UsageError(f"bad experiment config: {err}") from None


def cmd_coverage(args) -> int:
    config = resolve_experiment(args)
    report = evaluation.run_coverage(config, n_jobs=args.threads)
    payload = report.to_dict()
    payload["bound_checks"] = evaluation.check_coverage_bounds(report)
    manifest = RunManifest("coverage", config.to_dict(), config.seed)
    _write_text(args.out, dumps(payload), manifest)
    if args.csv:
        rows = report.flat_rows()
        header = ("rep", "method", "hits", "n_test", "mean_width", "empty", "ties")
        _write_csv(args.csv, header, ([r[h] for h in header] for r in rows), manifest)
    manifest.write(_manifest_path(args, args.out))
    return 0


# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(2)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"seeds are non-negative, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t]


def _common(p, out_required=True, threads=True):
    if threads:
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfstab", description="Random-forest stability and out-of-bag prediction intervals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("generator", choices=sorted(dataset.GENERATORS))
    p.add_argument("--n", type=_positive_int, required=True, help="number of rows")
    p.add_argument("--seed", type=_seed, help="RNG seed (default: $RF_SEED or 0)")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p, threads=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="train a forest and save it")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--config", help="JSON file with forest settings (flags override it)")
    p.add_argument("--trees", type=_positive_int, help="number of trees (default 500)")
    p.add_argument("--mtry", type=_positive_int, help="features tried per split (default max(d/3, 1))")
    p.add_argument("--min-node", type=_positive_int, help="nodes with at most this many draws are leaves (default 5)")
    p.add_argument("--max-depth", type=_positive_int, help="depth limit (default unlimited)")
    p.add_argument("--seed", type=_seed, help="root seed (default: $RF_SEED or 0)")
    p.add_argument("--out", required=True, help="output forest file")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("theory", help="print the finite-B stability budget as JSON (see also: theory sweep)")
    p.add_argument("--config", help="JSON file with any of n, B, eps2, lam, expected_max_sq, tail")
    p.add_argument("--n", type=_positive_int, help="training size")
    p.add_argument("--B", type=_positive_int, help="number of trees")
    p.add_argument("--eps2", type=float, help="derandomized-forest tolerance")
    p.add_argument("--lambda", dest="lam", type=float, help="multiplier on E[max Y^2], > 1")
    p.add_argument("--expected-max-sq", type=float, help="E[max_i Y_i^2] or a bound on it")
    p.add_argument("--tail", type=float, help="P(max Y^2 > lambda E), default 0")
    p.add_argument("--out", help="also write the JSON here")
    _common(p, threads=False)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("theory-sweep", prog="rfstab theory sweep", help="stability budget over an (n, B) grid as CSV")
    p.add_argument("--ns", type=_int_list, required=True, help="comma-separated training sizes")
    p.add_argument("--Bs", type=_int_list, required=True, help="comma-separated tree counts")
    p.add_argument("--scaling", choices=sorted(theory.EXPECTED_MAX_SCALINGS), default="harmonic",
                   help="growth of E[max Y^2] in n")
    p.add_argument("--e-scale", type=float, default=1.0, help="multiplier on the scaling")
    p.add_argument("--eps2", type=float, required=True, help="eps2 at n=1 (times n^eps2-kappa)")
    p.add_argument("--eps2-kappa", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="lambda at n=1 (times n^lambda-kappa)")
    p.add_argument("--lambda-kappa", dest="lam_kappa", type=float, default=0.0)
    p.add_argument("--tail", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output CSV")
    _common(p, threads=False)
    p.set_defaults(func=cmd_theory_sweep)

    p = sub.add_parser("stability", help="empirical forest-vs-OOB stability and density exports")
    p.add_argument("--forest", required=True)
    p.add_argument("--train", required=True, help="training CSV the forest was fit on")
    p.add_argument("--test", required=True, help="held-out CSV")
    p.add_argument("--response", default="y", help="response column name (default y)")
    p.add_argument("--nu-hat", type=float, default=0.05)
    p.add_argument("--max-points", type=_positive_int, default=DIFFERENCE_SAMPLE_CAP,
                   help="subsample size for the pooled difference density")
    p.add_argument("--seed", type=_seed, help="subsampling seed (default: $RF_SEED or 0)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", help="manifest path (default: <out-dir>/manifest.json)")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("interval", help="prediction intervals at new feature rows")
    p.add_argument("--forest", required=True)
    p.add_argument("--train", required=True, help="training CSV the forest was fit on")
    p.add_argument("--response", default="y", help="response column name (default y)")
    p.add_argument("--x", required=True, help="CSV of test features (a response column is ignored)")
    p.add_argument("--method", choices=INTERVAL_METHODS, default="jabs")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.0, help="signed margin for jabs; |epsilon| for js")
    p.add_argument("--convention", choices=("n+1", "n"), default="n+1", help="quantile index for jab/jabs")
    p.add_argument("--out", required=True, help="output JSON")
    _common(p)
    p.set_defaults(func=cmd_interval)

    p = sub.add_parser("coverage", help="Monte-Carlo coverage experiment")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--reps", type=_positive_int, help="override the number of replications")
    p.add_argument("--seed", type=_seed, help="override the experiment seed")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv", help="also write one row per (rep, method)")
    _common(p)
    p.set_defaults(func=cmd_coverage)
    return parser


def _rewrite(argv: list[str]) -> list[str]:
    if len(argv) >= 2 and argv[0] == "theory" and argv[1] == "sweep":
        return ["theory-sweep", *argv[2:]]
    return argv


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_rewrite(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        sys.stderr.write(json.dumps({"error": "usage", "command": args.command, "message": str(err)}) + "\n")
        return 2
    except (ValueError, OSError, KeyError) as err:
        sys.stderr.write(
            json.dumps({"error": type(err).__name__, "command": args.command, "message": str(err)}) + "\n"
        )
        return 1


def main() -> None:
    raise SystemExit(dispatch())
