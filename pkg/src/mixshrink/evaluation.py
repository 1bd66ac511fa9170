"""Simulation designs, estimation/prediction metrics, cross-validation and the replication runner."""

from __future__ import annotations

import enum
import itertools
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import Engine, FitConfig, Method, StopReason, fit
from .errors import DimensionError, ExperimentError, MixShrinkError, SpecError
from .model import Dataset, MixtureParams

METRICS = ("sse_beta", "sse_pi", "sse_sigma2", "rmsep")


class PredictRule(str, enum.Enum):
    MIXTURE_MEAN = "mixture_mean"
    MAX_COMPONENT = "max_component"


class StartMode(str, enum.Enum):
    RANDOM_PARTITION = "random-partition"
    TRUTH = "truth"


# --- data generation -------------------------------------------------------


def generate_collinear_design(n: int, n_covariates: int, rho: float,
                              rng: np.random.Generator) -> np.ndarray:
    """Covariates sharing one standard-normal factor.

    Column j is ``sqrt(1 - rho^2) w_j + rho w_shared``: unit variance, and every
    pair of columns has correlation ``rho^2``.
    """
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    if n < 1 or n_covariates < 1:
        raise ValueError("n and n_covariates must be positive")
    w = rng.standard_normal((n, n_covariates + 1))
    return np.sqrt(1.0 - rho ** 2) * w[:, :n_covariates] + rho * w[:, n_covariates:]


def generate_mixture_responses(X, true_params: MixtureParams,
                               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw a component label per row, then ``y = x'beta_label + N(0, sigma2_label)``.

    The labels are returned for diagnostics only.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != true_params.p:
        raise DimensionError(f"X must have {true_params.p} columns")
    labels = rng.choice(true_params.n_components, size=X.shape[0], p=true_params.weights)
    means = np.einsum("ij,ij->i", X, true_params.coeffs[labels])
    noise = rng.standard_normal(X.shape[0]) * np.sqrt(true_params.variances[labels])
    return means + noise, labels


# --- metrics ---------------------------------------------------------------


def align_components(estimated: MixtureParams, reference: MixtureParams) -> MixtureParams:
    """Relabel ``estimated`` to minimize the summed squared coefficient distance to ``reference``.

    Exhaustive over permutations; the first (lexicographically smallest) minimizer wins.
    """
    if estimated.n_components != reference.n_components or estimated.p != reference.p:
        raise DimensionError("estimated and reference parameters differ in shape")
    J = estimated.n_components
    # cost[a, b]: distance from estimated component a to reference component b
    diff = estimated.coeffs[:, None, :] - reference.coeffs[None, :, :]
    cost = np.sum(diff ** 2, axis=2)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(J)):
        c = sum(cost[perm[j], j] for j in range(J))
        if c < best_cost:
            best, best_cost = perm, c
    return estimated.permuted(best)


def sse_metrics(estimated: MixtureParams, reference: MixtureParams) -> tuple[float, float, float]:
    """Squared errors of the stacked coefficients, the first J-1 proportions and the variances."""
    if estimated.n_components != reference.n_components or estimated.p != reference.p:
        raise DimensionError("estimated and reference parameters differ in shape")
    sse_beta = float(np.sum((estimated.coeffs - reference.coeffs) ** 2))
    sse_pi = float(np.sum((estimated.weights[:-1] - reference.weights[:-1]) ** 2))
    sse_sigma2 = float(np.sum((estimated.variances - reference.variances) ** 2))
    return sse_beta, sse_pi, sse_sigma2


def predict(params: MixtureParams, X, rule: PredictRule | str = PredictRule.MIXTURE_MEAN) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != params.p:
        raise DimensionError(f"X must have {params.p} columns")
    rule = PredictRule(rule)
    if rule is PredictRule.MIXTURE_MEAN:
        return X @ (params.weights @ params.coeffs)
    return X @ params.coeffs[int(np.argmax(params.weights))]


@dataclass(frozen=True)
class CrossValResult:
    rmsep: float
    fold_rmsep: tuple[float, ...]
    fold_sizes: tuple[int, ...]
    fold_stop_reasons: tuple[str, ...]
    predictions: np.ndarray

    @property
    def flagged(self) -> bool:
        """True when some fold's fit ended on a degenerate partition."""
        return StopReason.DEGENERATE_PARTITION.value in self.fold_stop_reasons


def cross_validate(data: Dataset, config: FitConfig, k_folds: int, rng: np.random.Generator,
                   rule: PredictRule | str = PredictRule.MIXTURE_MEAN) -> CrossValResult:
    """K-fold prediction error; every observation is predicted once from a fit without it.

    All fold fits reuse ``config`` (including its seed), so the result does not
    depend on how the folds are numbered.
    """
    if not 2 <= k_folds <= data.n:
        raise ValueError(f"need 2 <= k_folds <= n, got k_folds={k_folds}, n={data.n}")
    folds = np.array_split(rng.permutation(data.n), k_folds)
    pred = np.empty(data.n)
    fold_rmsep, reasons = [], []
    for test in folds:
        train = np.setdiff1d(np.arange(data.n), test, assume_unique=True)
        result = fit(data.subset(train), config)
        pred[test] = predict(result.params, data.X[test], rule)
        fold_rmsep.append(float(np.sqrt(np.mean((data.y[test] - pred[test]) ** 2))))
        reasons.append(result.stop_reason.value)
    return CrossValResult(
        rmsep=float(np.sqrt(np.mean((data.y - pred) ** 2))),
        fold_rmsep=tuple(fold_rmsep),
        fold_sizes=tuple(len(f) for f in folds),
        fold_stop_reasons=tuple(reasons),
        predictions=pred,
    )


def kfold_rmsep(data: Dataset, config: FitConfig, k_folds: int, rng: np.random.Generator,
                rule: PredictRule | str = PredictRule.MIXTURE_MEAN) -> float:
    """Root mean squared error over the pooled held-out predictions."""
    return cross_validate(data, config, k_folds, rng, rule).rmsep


# --- scenarios -------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell: a design (n, rho), the true mixture and the fits to compare.

    ``k_folds = 0`` skips cross-validation when only estimation error is wanted.
    """

    n: int
    rho: float
    true_params: MixtureParams
    n_covariates: int
    intercept: bool = True
    k_folds: int = 5
    n_replicates: int = 100
    seed: int = 0
    fit_configs: tuple[FitConfig, ...] = ()
    predict_rule: PredictRule = PredictRule.MIXTURE_MEAN
    start: StartMode = StartMode.RANDOM_PARTITION
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "predict_rule", PredictRule(self.predict_rule))
        object.__setattr__(self, "start", StartMode(self.start))
        object.__setattr__(self, "fit_configs", tuple(self.fit_configs))
        if self.true_params.p != self.n_covariates + int(self.intercept):
            raise DimensionError("true coefficients do not match n_covariates and intercept")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.k_folds == 1 or self.k_folds < 0 or self.k_folds > self.n:
            raise ValueError("k_folds must be 0 (off) or between 2 and n")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        labels = [c.label for c in self.fit_configs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate method/engine cells: {labels}")
        for c in self.fit_configs:
            if c.n_components != self.true_params.n_components:
                raise DimensionError(f"{c.label} fits {c.n_components} components, truth has "
                                     f"{self.true_params.n_components}")


@dataclass(frozen=True)
class ReplicateMetrics:
    sse_beta: float
    sse_pi: float
    sse_sigma2: float
    rmsep: float | None
    stop_reason: str
    fold_stop_reasons: tuple[str, ...] = ()
    cv_flagged: bool = False

    def value(self, metric: str) -> float | None:
        return getattr(self, metric)


@dataclass(frozen=True)
class ReplicateFailure:
    """A fit that produced no usable estimate.

    ``degenerate`` marks fits whose every start ended on a degenerate partition;
    those are excluded and counted but do not count as errors.
    """

    reason: str
    degenerate: bool = False


@dataclass(frozen=True)
class MetricStats:
    median: float
    ci_low: float
    ci_high: float

    @property
    def ci_length(self) -> float:
        return self.ci_high - self.ci_low


@dataclass(frozen=True)
class MetricsSummary:
    """Medians and 95% percentile intervals of one method/engine cell."""

    stats: dict[str, MetricStats]
    n_used: int
    n_failed: int
    n_excluded: int = 0
    n_cv_flagged: int = 0
    stop_reasons: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, metric: str) -> MetricStats:
        return self.stats[metric]


def _replicate_seeds(seed: int, r: int):
    data_ss, fold_ss, fit_ss = np.random.SeedSequence(seed, spawn_key=(r,)).spawn(3)
    fit_seed = int(fit_ss.generate_state(1)[0])
    return np.random.default_rng(data_ss), fold_ss, fit_seed


def simulate_dataset(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    Z = generate_collinear_design(spec.n, spec.n_covariates, spec.rho, rng)
    X = np.column_stack([np.ones(spec.n), Z]) if spec.intercept else Z
    y, labels = generate_mixture_responses(X, spec.true_params, rng)
    return Dataset(y, X, intercept=spec.intercept), labels


def run_replicate(spec: ScenarioSpec, r: int) -> list[ReplicateMetrics | ReplicateFailure]:
    """Everything for replicate ``r``: one dataset shared by all fit configs.

    Seeds come from ``(spec.seed, r)`` alone, never from execution order.
    """
    data_rng, fold_ss, fit_seed = _replicate_seeds(spec.seed, r)
    data, _ = simulate_dataset(spec, data_rng)
    out = []
    for config in spec.fit_configs:
        config = replace(config, seed=fit_seed)
        if spec.start is StartMode.TRUTH:
            config = replace(config, init=spec.true_params)
        try:
            result = fit(data, config)
        except MixShrinkError as exc:
            out.append(ReplicateFailure(f"{type(exc).__name__}: {exc}"))
            continue
        if result.stop_reason is StopReason.DEGENERATE_PARTITION:
            out.append(ReplicateFailure("degenerate-partition", degenerate=True))
            continue
        aligned = align_components(result.params, spec.true_params)
        sse_b, sse_p, sse_s = sse_metrics(aligned, spec.true_params)
        rmsep, fold_reasons, flagged = None, (), False
        if spec.k_folds:
            # every config sees the same folds
            try:
                cv = cross_validate(data, config, spec.k_folds,
                                    np.random.default_rng(fold_ss), spec.predict_rule)
            except MixShrinkError as exc:
                out.append(ReplicateFailure(f"cross-validation: {type(exc).__name__}: {exc}"))
                continue
            rmsep, fold_reasons, flagged = cv.rmsep, cv.fold_stop_reasons, cv.flagged
        out.append(ReplicateMetrics(sse_b, sse_p, sse_s, rmsep, result.stop_reason.value,
                                    fold_reasons, flagged))
    return out


def _stats(values: np.ndarray) -> MetricStats:
    # numpy's default "linear" method is the type-7 sample quantile
    lo, med, hi = np.percentile(values, [2.5, 50.0, 97.5])
    return MetricStats(float(med), float(lo), float(hi))


def summarize(spec: ScenarioSpec, replicates: dict[int, list],
              max_failure_fraction: float = 0.10) -> dict[tuple[str, str], MetricsSummary]:
    """Reduce per-replicate results (keyed by replicate index) cell by cell, in index order."""
    order = sorted(replicates)
    summary = {}
    for c, config in enumerate(spec.fit_configs):
        rows = [replicates[r][c] for r in order]
        ok = [m for m in rows if isinstance(m, ReplicateMetrics)]
        errors = [m for m in rows if isinstance(m, ReplicateFailure) and not m.degenerate]
        n_failed = len(errors)
        if n_failed > max_failure_fraction * len(rows):
            reasons = Counter(m.reason.split(":")[0] for m in errors)
            raise ExperimentError(
                f"{config.label}: {n_failed} of {len(rows)} replicates failed ({dict(reasons)})",
                n_failed, len(rows))
        if not ok:
            raise ExperimentError(f"{config.label}: no usable replicates", n_failed, len(rows))
        stats = {}
        for metric in METRICS:
            vals = np.array([m.value(metric) for m in ok], dtype=object)
            if any(v is None for v in vals):
                continue
            stats[metric] = _stats(vals.astype(float))
        summary[(config.method.value, config.engine.value)] = MetricsSummary(
            stats=stats,
            n_used=len(ok),
            n_failed=n_failed,
            n_excluded=len(rows) - len(ok) - n_failed,
            n_cv_flagged=sum(m.cv_flagged for m in ok),
            stop_reasons=dict(sorted(Counter(m.stop_reason for m in ok).items())),
        )
    return summary


def run_experiment(spec: ScenarioSpec, workers: int = 1, order=None,
                   progress=None) -> dict[tuple[str, str], MetricsSummary]:
    """Run every replicate of ``spec`` and summarize each method/engine cell.

    ``order`` optionally fixes the execution order of replicate indices; the
    summary is identical for any order and any number of workers.
    """
    order = list(range(spec.n_replicates)) if order is None else list(order)
    if sorted(order) != list(range(spec.n_replicates)):
        raise ValueError("order must be a permutation of the replicate indices")
    results: dict[int, list] = {}
    if workers <= 1:
        for i, r in enumerate(order):
            results[r] = run_replicate(spec, r)
            if progress:
                progress(i + 1, len(order))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(order) // (4 * workers))
            for i, (r, res) in enumerate(zip(order, pool.map(
                    run_replicate, itertools.repeat(spec), order, chunksize=chunk))):
                results[r] = res
                if progress:
                    progress(i + 1, len(order))
    return summarize(spec, results)


# --- spec documents --------------------------------------------------------

_SCHEMA_FILE = "scenario.schema.json"


def _schema() -> dict:
    return json.loads(resources.files("mixshrink").joinpath("specs").joinpath(_SCHEMA_FILE).read_text())


def validate_spec_document(doc) -> None:
    """Raise ``SpecError`` listing every schema violation in ``doc``."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(_schema())
    problems = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if not problems:
        tp = doc["true_params"]
        J = len(tp["weights"])
        p = doc["n_covariates"] + int(doc.get("intercept", True))
        if len(tp["coeffs"]) != J or len(tp["variances"]) != J:
            problems.append("true_params: weights, coeffs and variances need one entry per component")
        if any(len(row) != p for row in tp["coeffs"]):
            problems.append(f"true_params/coeffs: each row needs {p} entries "
                            "(n_covariates plus the intercept, if any)")
        if abs(sum(tp["weights"]) - 1.0) > 1e-10:
            problems.append("true_params/weights: must sum to 1")
    if problems:
        raise SpecError(problems)


def scenarios_from_document(doc, **overrides) -> list[ScenarioSpec]:
    """Expand a spec document into one ScenarioSpec per (n, rho), in document order.

    ``overrides`` replace top-level document fields (e.g. ``n_replicates=2``).
    """
    doc = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
    validate_spec_document(doc)
    tp = MixtureParams.from_dict(doc["true_params"])
    options = dict(doc.get("fit_options", {}))
    options.setdefault("n_components", tp.n_components)
    configs = tuple(
        FitConfig(method=Method(m), engine=Engine(e), **options)
        for m in doc.get("methods", [m.value for m in Method])
        for e in doc.get("engines", [e.value for e in Engine])
    )
    ns = doc["n"] if isinstance(doc["n"], list) else [doc["n"]]
    rhos = doc["rho"] if isinstance(doc["rho"], list) else [doc["rho"]]
    return [
        ScenarioSpec(
            n=int(n), rho=float(rho), true_params=tp, n_covariates=doc["n_covariates"],
            intercept=doc.get("intercept", True), k_folds=doc.get("k_folds", 5),
            n_replicates=doc["n_replicates"], seed=doc["seed"], fit_configs=configs,
            predict_rule=doc.get("predict", PredictRule.MIXTURE_MEAN.value),
            start=doc.get("start", StartMode.RANDOM_PARTITION.value), name=doc.get("name", ""),
        )
        for n in ns for rho in rhos
    ]


def load_spec_document(path) -> dict:
    """Read a JSON spec from a path, or a bundled spec by bare name (e.g. ``paper_sim1``)."""
    p = Path(path)
    if p.exists():
        text = p.read_text(encoding="utf-8")
    else:
        bundled = resources.files("mixshrink").joinpath("specs").joinpath(
            p.name if p.suffix == ".json" else f"{p.name}.json")
        if str(path) != p.name or not bundled.is_file():
            raise FileNotFoundError(f"spec file not found: {path}")
        text = bundled.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc


def bundled_specs() -> list[str]:
    return sorted(f.name[:-5] for f in resources.files("mixshrink").joinpath("specs").iterdir()
                  if f.name.endswith(".json") and not f.name.endswith(".schema.json"))
