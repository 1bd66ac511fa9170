"""``mixshrink`` command line: fit a CSV, cross-validate it, or run a simulation spec."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .engine import Engine, FitConfig, Method, fit
from .errors import MixShrinkError
from .evaluation import (
    METRICS,
    PredictRule,
    cross_validate,
    load_spec_document,
    run_experiment,
    scenarios_from_document,
)
from .model import Dataset

SEED_ENV = "MIXSHRINK_SEED"


class CliError(Exception):
    """A user-facing error; the message is printed as is."""


# --- CSV input -------------------------------------------------------------


def read_csv_dataset(path, response: str, covariates=None, intercept: bool = True) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty file, a header row is required") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise CliError(f"{path}: response column {response!r} not in header {header}")
        if covariates:
            missing = [c for c in covariates if c not in header]
            if missing:
                raise CliError(f"{path}: covariate columns not found: {', '.join(missing)}")
            names = list(covariates)
        else:
            names = [h for h in header if h != response]
        cols = [header.index(c) for c in [response, *names]]
        rows = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            line = reader.line_num
            if len(row) != len(header):
                raise CliError(f"{path}, line {line}: expected {len(header)} fields, got {len(row)}")
            values = []
            for c in cols:
                cell = row[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise CliError(f"{path}, line {line}, column {header[c]!r}: "
                                   f"not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise CliError(f"{path}, line {line}, column {header[c]!r}: "
                                   f"non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise CliError(f"{path}: no data rows")
    data = np.array(rows)
    if not names and not intercept:
        raise CliError("no covariates and no intercept: nothing to regress on")
    Z = data[:, 1:] if names else np.empty((len(rows), 0))
    try:
        return Dataset.from_covariates(data[:, 0], Z, intercept=intercept, names=tuple(names))
    except MixShrinkError as exc:
        raise CliError(f"{path}: {exc}") from exc


# --- tables ----------------------------------------------------------------


@dataclass(frozen=True)
class TableRow:
    method: str
    engine: str
    metric: str
    median: float
    ci_low: float
    ci_high: float
    ci_length: float
    n: int
    rho: float | None
    n_used: int
    n_failed: int
    n_excluded: int


TABLE_COLUMNS = [f.name for f in fields(TableRow)]
_FLOATS = {"median", "ci_low", "ci_high", "ci_length", "rho"}
_INTS = {"n", "n_used", "n_failed", "n_excluded"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest string that parses back to the same double
    return str(value)


def write_table(rows: list[TableRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in TABLE_COLUMNS])


def read_table(fh) -> list[TableRow]:
    reader = csv.DictReader(fh)
    out = []
    for rec in reader:
        kw = {}
        for c in TABLE_COLUMNS:
            v = rec[c]
            if c in _FLOATS:
                kw[c] = float(v) if v != "" else None
            elif c in _INTS:
                kw[c] = int(v)
            else:
                kw[c] = v
        out.append(TableRow(**kw))
    return out


def _g6(x) -> str:
    return "" if x is None else f"{x:.6g}"


def format_table(rows: list[TableRow]) -> str:
    head = ["method", "engine", "n", "rho", "median", "ci_low", "ci_high", "ci_length", "used",
            "failed", "excluded"]
    body = [[r.method, r.engine, str(r.n), _g6(r.rho), _g6(r.median), _g6(r.ci_low),
             _g6(r.ci_high), _g6(r.ci_length), str(r.n_used), str(r.n_failed), str(r.n_excluded)]
            for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


# --- JSON output -----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dump_json(obj) -> str:
    # Python's float repr round-trips exactly and never needs more than 17 digits
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


# --- commands --------------------------------------------------------------


def _resolve_seed(arg_seed):
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return None
    try:
        seed = int(env)
    except ValueError:
        raise CliError(f"{SEED_ENV}={env!r} is not an integer") from None
    if seed < 0:
        raise CliError(f"{SEED_ENV} must be non-negative")
    return seed


def _fit_config(args) -> FitConfig:
    seed = _resolve_seed(args.seed)
    try:
        return FitConfig(method=Method(args.method), engine=Engine(args.engine),
                         n_components=args.components, tol=args.tol, max_iter=args.max_iter,
                         n_starts=args.starts, seed=0 if seed is None else seed)
    except (ValueError, MixShrinkError) as exc:
        raise CliError(str(exc)) from exc


def _dataset(args) -> Dataset:
    covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
    return read_csv_dataset(args.data, args.response, covs, intercept=not args.no_intercept)


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fit_summary(data: Dataset, result) -> str:
    names = list(data.names) or [f"x{i}" for i in range(data.p)]
    lines = [f"{result.config.label}: {result.params.n_components} components, n = {data.n}",
             f"stop: {result.stop_reason.value} after {result.iterations} iterations; "
             f"objective {result.objective:.6g}; log-likelihood {result.loglik_trace[-1]:.6g}"]
    for j in range(result.params.n_components):
        coefs = ", ".join(f"{nm}={b:.6g}" for nm, b in zip(names, result.params.coeffs[j]))
        extra = ""
        if result.penalty.k is not None and np.any(result.penalty.k):
            extra = f"  k={result.penalty.k[j]:.6g}"
            if result.penalty.d is not None and np.any(result.penalty.d):
                extra += f" d={result.penalty.d[j]:.6g}"
        lines.append(f"  [{j}] pi={result.params.weights[j]:.6g} sigma2="
                     f"{result.params.variances[j]:.6g}  {coefs}{extra}")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    data = _dataset(args)
    config = _fit_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = fit(data, config)
    report = result.to_dict()
    report["covariates"] = list(data.names)
    report["n"] = data.n
    out = _out_dir(args)
    if args.json:
        sys.stdout.write(dump_json(report))
    else:
        print(_fit_summary(data, result))
    if out is not None:
        (out / "fit.json").write_text(dump_json(report), encoding="utf-8")
    return 0


def cmd_crossval(args) -> int:
    data = _dataset(args)
    config = _fit_config(args)
    if not 2 <= args.folds <= data.n:
        raise CliError(f"--folds must be between 2 and n = {data.n}, got {args.folds}")
    rng = np.random.default_rng(config.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cv = cross_validate(data, config, args.folds, rng, PredictRule(args.predict))
    report = {
        "method": config.method.value, "engine": config.engine.value, "folds": args.folds,
        "seed": config.seed, "predict": args.predict, "rmsep": cv.rmsep,
        "fold_rmsep": list(cv.fold_rmsep), "fold_sizes": list(cv.fold_sizes),
        "fold_stop_reasons": list(cv.fold_stop_reasons), "flagged": cv.flagged,
    }
    if args.json:
        sys.stdout.write(dump_json(report))
    else:
        print(f"{config.label}: RMSEP {cv.rmsep:.6g} over {args.folds} folds (seed {config.seed})")
        for i, (r, size, stop) in enumerate(zip(cv.fold_rmsep, cv.fold_sizes,
                                                cv.fold_stop_reasons)):
            print(f"  fold {i}: n={size} rmsep={r:.6g} stop={stop}")
        if cv.flagged:
            print("  warning: at least one fold fit stopped on a degenerate partition")
    out = _out_dir(args)
    if out is not None:
        (out / "crossval.json").write_text(dump_json(report), encoding="utf-8")
    return 0


def simulation_tables(doc, workers: int = 1, progress=None, **overrides) -> dict[str, list[TableRow]]:
    """Run every (n, rho) scenario of a spec document; rows grouped by metric."""
    tables: dict[str, list[TableRow]] = {m: [] for m in METRICS}
    for spec in scenarios_from_document(doc, **overrides):
        summary = run_experiment(spec, workers=workers, progress=progress)
        for (method, engine), s in summary.items():
            for metric, st in s.stats.items():
                tables[metric].append(TableRow(
                    method=method, engine=engine, metric=metric, median=st.median,
                    ci_low=st.ci_low, ci_high=st.ci_high, ci_length=st.ci_length,
                    n=spec.n, rho=spec.rho, n_used=s.n_used, n_failed=s.n_failed,
                    n_excluded=s.n_excluded))
    return {m: rows for m, rows in tables.items() if rows}


def cmd_simulate(args) -> int:
    try:
        doc = load_spec_document(args.spec)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from exc
    seed = _resolve_seed(args.seed)
    overrides = {"seed": seed, "n_replicates": args.replicates, "k_folds": args.folds}
    if args.rho:
        overrides["rho"] = args.rho
    if args.n:
        overrides["n"] = args.n
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tables = simulation_tables(doc, workers=args.workers, **overrides)
    out = _out_dir(args)
    for metric, rows in tables.items():
        print(f"== {metric} ==")
        print(format_table(rows))
        print()
        if out is not None:
            with (out / f"{metric}.csv").open("w", newline="", encoding="utf-8") as fh:
                write_table(rows, fh)
    return 0


# --- argument parsing ------------------------------------------------------


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--no-intercept", action="store_true", help="do not add an intercept column")
    p.add_argument("--method", choices=[m.value for m in Method], default="ml")
    p.add_argument("--engine", choices=[e.value for e in Engine], default="em")
    p.add_argument("--components", type=int, default=2, metavar="J")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV}, else 0)")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of a summary")
    p.add_argument("--out", help="directory for the JSON report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixshrink",
        description="Mixtures of linear regressions with ridge and Liu-type shrinkage.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a mixture of regressions to a CSV file")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("crossval", help="K-fold cross-validated prediction error")
    _add_fit_flags(p_cv)
    p_cv.add_argument("--folds", type=int, default=5)
    p_cv.add_argument("--predict", choices=[r.value for r in PredictRule],
                      default=PredictRule.MIXTURE_MEAN.value)
    p_cv.set_defaults(func=cmd_crossval)

    p_sim = sub.add_parser("simulate", help="run a JSON experiment spec")
    p_sim.add_argument("spec", help="spec file, or the name of a bundled spec (e.g. paper_sim1)")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--replicates", type=int)
    p_sim.add_argument("--folds", type=int, help="cross-validation folds (0 disables RMSEP)")
    p_sim.add_argument("--rho", type=float, nargs="+")
    p_sim.add_argument("--n", type=int, nargs="+")
    p_sim.add_argument("--out", help="directory for one CSV table per metric")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, MixShrinkError, OSError, ValueError) as exc:
        print(f"mixshrink: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
