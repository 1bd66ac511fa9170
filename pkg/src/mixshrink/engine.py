"""EM, classification EM and stochastic EM engines for every estimation method."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import (
    DegeneratePartitionError,
    DimensionError,
    FitError,
    NumericalError,
)
from .model import (
    Dataset,
    MixtureParams,
    PenaltyKind,
    PenaltySpec,
    VARIANCE_FLOOR,
    responsibilities,
)


class Method(str, enum.Enum):
    ML = "ml"
    RIDGE = "ridge"
    LT_ITR = "lt-itr"
    LT_HKP = "lt-hkp"


class Engine(str, enum.Enum):
    EM = "em"
    CEM = "cem"
    SEM = "sem"


class StopReason(str, enum.Enum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max-iter"
    DEGENERATE_PARTITION = "degenerate-partition"


class Init(str, enum.Enum):
    RANDOM_PARTITION = "random-partition"
    KMEANS = "kmeans"


_METHOD_CODE = {Method.ML: K.ML, Method.RIDGE: K.RIDGE, Method.LT_ITR: K.LT_ITR,
                Method.LT_HKP: K.LT_HKP}
_ENGINE_CODE = {Engine.EM: K.EM, Engine.CEM: K.CEM, Engine.SEM: K.SEM}
_STOP = {K.STOP_TOL: StopReason.TOLERANCE, K.STOP_MAXITER: StopReason.MAX_ITER,
         K.STOP_DEGENERATE: StopReason.DEGENERATE_PARTITION}


@dataclass(frozen=True)
class FitConfig:
    method: Method = Method.ML
    engine: Engine = Engine.EM
    n_components: int = 2
    tol: float = 1e-6
    max_iter: int = 500
    n_starts: int = 5
    seed: int = 0
    variance_floor: float = VARIANCE_FLOOR
    penalize_intercept: bool = True
    init: Init | MixtureParams = Init.RANDOM_PARTITION
    hkp_uses_sd: bool = False
    dj_literal: bool = False
    min_partition_size: int | None = None  # None: p + 1, i.e. at least one residual df
    select_by: str = "loglik"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "engine", Engine(self.engine))
        if not isinstance(self.init, MixtureParams):
            object.__setattr__(self, "init", Init(self.init))
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.min_partition_size is not None and self.min_partition_size < 2:
            raise ValueError("min_partition_size must be >= 2")
        if isinstance(self.init, MixtureParams) and self.init.n_components != self.n_components:
            raise DimensionError("supplied init has the wrong number of components")

    @property
    def label(self) -> str:
        return f"{self.method.value}/{self.engine.value}"


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    counts: np.ndarray


@dataclass
class FitResult:
    params: MixtureParams
    objective: float
    objective_trace: np.ndarray
    loglik_trace: np.ndarray
    k_trace: np.ndarray
    d_trace: np.ndarray
    converged: bool
    stop_reason: StopReason
    iterations: int
    responsibilities_final: np.ndarray
    penalty: PenaltySpec
    config: FitConfig
    variance_floor_hit: bool = False
    start_reasons: list[str] = field(default_factory=list)
    best_start: int = 0
    ridge_stage_iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.config.method.value,
            "engine": self.config.engine.value,
            "n_components": self.params.n_components,
            "components": [
                {
                    "weight": float(self.params.weights[j]),
                    "coefficients": self.params.coeffs[j].tolist(),
                    "variance": float(self.params.variances[j]),
                    "k": float(self.penalty.k[j]) if self.penalty.k is not None else 0.0,
                    "d": float(self.penalty.d[j]) if self.penalty.d is not None else 0.0,
                }
                for j in range(self.params.n_components)
            ],
            "objective": float(self.objective),
            "loglik": float(self.loglik_trace[-1]) if self.loglik_trace.size else None,
            "converged": bool(self.converged),
            "stop_reason": self.stop_reason.value,
            "iterations": int(self.iterations),
            "ridge_stage_iterations": int(self.ridge_stage_iterations),
            "variance_floor_hit": bool(self.variance_floor_hit),
            "start_reasons": list(self.start_reasons),
            "best_start": int(self.best_start),
            "objective_trace": self.objective_trace.tolist(),
            "loglik_trace": self.loglik_trace.tolist(),
            "k_trace": self.k_trace.tolist(),
            "d_trace": self.d_trace.tolist(),
        }


def _mask(data: Dataset, config: FitConfig) -> np.ndarray:
    mask = np.ones(data.p)
    if data.intercept and not config.penalize_intercept:
        mask[0] = 0.0
    return mask


def _min_count(data: Dataset, config: FitConfig) -> int:
    return data.p + 1 if config.min_partition_size is None else config.min_partition_size


def _k_input(k_fixed, J: int) -> np.ndarray:
    if k_fixed is None:
        return -np.ones(J)
    return np.ascontiguousarray(np.broadcast_to(np.asarray(k_fixed, dtype=float), (J,)))


def e_step(data: Dataset, params: MixtureParams) -> np.ndarray:
    return responsibilities(data, params)


def _partition(assign: np.ndarray, J: int) -> Partition:
    return Partition(assignment=assign, counts=np.bincount(assign, minlength=J))


def c_step(tau, rng: np.random.Generator) -> Partition:
    """Assign each row to its largest responsibility, breaking exact ties uniformly."""
    tau = np.ascontiguousarray(np.asarray(tau, dtype=float))
    u = rng.random(tau.shape[0])
    return _partition(K.c_step(tau, u), tau.shape[1])


def s_step(tau, rng: np.random.Generator) -> Partition:
    """Draw each row's component from Multinomial(1, tau_i)."""
    tau = np.ascontiguousarray(np.asarray(tau, dtype=float))
    u = rng.random(tau.shape[0])
    return _partition(K.s_step(tau, u), tau.shape[1])


def _m_step(data, W, pi, config, k_fixed):
    J = W.shape[1]
    st, B, s2, ks, ds, P = K.m_step(
        data.X, data.y, np.ascontiguousarray(W), _METHOD_CODE[config.method], _k_input(k_fixed, J),
        _mask(data, config), bool(_mask(data, config).all()), config.variance_floor,
        config.dj_literal)
    if st == K.DEGENERATE:
        raise DegeneratePartitionError("a component is starved or its weighted design is singular")
    if st == K.NONFINITE:
        raise NumericalError("M-step produced non-finite parameters")
    return MixtureParams(pi, B, s2)


def m_step_pooled(data: Dataset, tau, config: FitConfig, k_fixed=None) -> MixtureParams:
    """M-step with the full design weighted by each responsibility column.

    ``k_fixed`` supplies frozen per-component k (required for LT(HKP), optional
    for ridge; ridge estimates k by the HKP rule when omitted).
    """
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (data.n, config.n_components):
        raise DimensionError(f"tau must have shape {(data.n, config.n_components)}")
    if tau.sum(axis=0).min() < K.MIN_WEIGHT:
        raise DegeneratePartitionError("a component has (almost) zero total responsibility")
    if config.method is Method.LT_HKP and k_fixed is None:
        raise ValueError("LT(HKP) needs the frozen k from a ridge fit")
    return _m_step(data, tau, tau.mean(axis=0), config, k_fixed)


def m_step_partitioned(data: Dataset, partition: Partition, tau, config: FitConfig,
                       k_fixed=None) -> MixtureParams:
    """M-step on each partition's rows, weighted by their responsibilities."""
    tau = np.asarray(tau, dtype=float)
    J = config.n_components
    if tau.shape != (data.n, J):
        raise DimensionError(f"tau must have shape {(data.n, J)}")
    counts = np.bincount(partition.assignment, minlength=J)
    if counts.min() < _min_count(data, config):
        raise DegeneratePartitionError(f"partition sizes {counts.tolist()}: empty or singleton")
    if config.method is Method.LT_HKP and k_fixed is None:
        raise ValueError("LT(HKP) needs the frozen k from a ridge fit")
    W, _ = K.partition_weights(np.ascontiguousarray(tau), partition.assignment.astype(np.int64))
    return _m_step(data, W, counts / data.n, config, k_fixed)


def sem_select(trace):
    """Return the parameters of the highest-objective iterate in ``[(params, objective), ...]``."""
    if not trace:
        raise ValueError("empty trace")
    best = 0
    for i, (_, obj) in enumerate(trace):
        if obj > trace[best][1]:
            best = i
    return trace[best][0]


# --- starting values -------------------------------------------------------


def _init_from_assignment(data: Dataset, assign: np.ndarray, J: int, floor: float):
    W = np.zeros((data.n, J))
    W[np.arange(data.n), assign] = 1.0
    counts = W.sum(axis=0)
    st, B, s2, *_ = K.m_step(data.X, data.y, W, K.ML_PINV, -np.ones(J), np.ones(data.p), True,
                             floor, False)
    if st != K.OK:
        return None
    return counts / data.n, B, s2


def _random_partition_init(data: Dataset, J: int, rng: np.random.Generator, floor: float):
    min_count = data.p + 1 if data.n >= J * (data.p + 1) else 2
    for _ in range(100):
        assign = rng.integers(0, J, size=data.n)
        if np.bincount(assign, minlength=J).min() >= min_count:
            out = _init_from_assignment(data, assign, J, floor)
            if out is not None:
                return out
    raise FitError("could not draw a usable random partition", ["init"])


def _kmeans_init(data: Dataset, J: int, rng: np.random.Generator, floor: float):
    """Cluster the pooled least-squares residuals into J groups (1-d Lloyd iterations)."""
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    r = data.y - data.X @ beta
    centers = np.quantile(r, (np.arange(J) + 0.5) / J)
    assign = np.zeros(data.n, dtype=np.int64)
    for _ in range(50):
        assign = np.argmin(np.abs(r[:, None] - centers[None, :]), axis=1)
        new = np.array([r[assign == j].mean() if np.any(assign == j) else centers[j]
                        for j in range(J)])
        if np.allclose(new, centers):
            break
        centers = new
    if np.bincount(assign, minlength=J).min() >= 2:
        out = _init_from_assignment(data, assign, J, floor)
        if out is not None:
            return out
    return _random_partition_init(data, J, rng, floor)


# --- the fit ---------------------------------------------------------------


@dataclass
class _Chain:
    stop: int
    iterations: int
    pi: np.ndarray
    B: np.ndarray
    s2: np.ndarray
    ks: np.ndarray
    ds: np.ndarray
    P: np.ndarray
    obj_tr: np.ndarray
    ll_tr: np.ndarray
    k_tr: np.ndarray
    d_tr: np.ndarray
    best_it: int

    @property
    def objective(self) -> float:
        if self.iterations == 0:
            return -np.inf
        i = self.best_it if self.best_it >= 0 and np.isfinite(self.obj_tr[self.best_it]) else -1
        if i < 0:
            i = self.iterations - 1
        return float(self.obj_tr[i])

    @property
    def loglik(self) -> float:
        """Observed-data log-likelihood of the returned iterate."""
        if self.iterations == 0:
            return -np.inf
        i = self.best_it if self.best_it >= 0 and np.isfinite(self.obj_tr[self.best_it]) else -1
        if i < 0:
            i = self.iterations - 1
        return float(self.ll_tr[i + 1])


def _run_chain(data, config, method_code, start, k_fixed, rng, mask) -> _Chain:
    pi, B, s2 = start
    J = pi.shape[0]
    if config.engine is Engine.EM:
        u = np.zeros((1, data.n))
    else:
        u = rng.random((config.max_iter, data.n))
    out = K.run_chain(
        data.X, data.y, _ENGINE_CODE[config.engine], method_code,
        np.ascontiguousarray(pi, dtype=float), np.ascontiguousarray(B, dtype=float),
        np.ascontiguousarray(s2, dtype=float), _k_input(k_fixed, J), u, float(config.tol),
        int(config.max_iter), float(config.variance_floor), mask, bool(mask.all()),
        bool(config.dj_literal), _min_count(data, config))
    return _Chain(*out)


def _frozen_k(chain: _Chain, mask: np.ndarray, use_sd: bool) -> np.ndarray:
    n_pen = mask.sum()
    bb = ((chain.B * mask) ** 2).sum(axis=1)
    spread = np.sqrt(chain.s2) if use_sd else chain.s2
    if np.any(bb <= 0):
        raise NumericalError("cannot freeze k: ridge coefficients are zero")
    return np.ascontiguousarray(n_pen * spread / bb)


def _one_start(data: Dataset, config: FitConfig, rng: np.random.Generator, mask: np.ndarray):
    J = config.n_components
    if isinstance(config.init, MixtureParams):
        start = (config.init.weights, config.init.coeffs, config.init.variances)
    elif config.init is Init.KMEANS:
        start = _kmeans_init(data, J, rng, config.variance_floor)
    else:
        start = _random_partition_init(data, J, rng, config.variance_floor)

    ridge_iters = 0
    k_fixed = None
    if config.method is Method.LT_HKP:
        ridge = _run_chain(data, config, K.RIDGE, start, None, rng, mask)
        if ridge.stop == K.STOP_NONFINITE:
            return None, "non-finite", 0
        if ridge.iterations == 0:
            return None, "degenerate-at-start", 0
        ridge_iters = ridge.iterations
        k_fixed = _frozen_k(ridge, mask, config.hkp_uses_sd)
        start = (ridge.pi, ridge.B, ridge.s2)
        chain = _run_chain(data, config, K.LT_HKP, start, k_fixed, rng, mask)
        if chain.iterations == 0 and chain.stop == K.STOP_DEGENERATE:
            # the frozen-k stage could not move; keep the ridge solution
            chain = ridge
            chain.ks = k_fixed.copy()
    else:
        chain = _run_chain(data, config, _METHOD_CODE[config.method], start, None, rng, mask)

    if chain.stop == K.STOP_NONFINITE:
        return None, "non-finite", ridge_iters
    if chain.iterations == 0:
        return None, "degenerate-at-start", ridge_iters
    return chain, _STOP[chain.stop].value, ridge_iters


def fit(data: Dataset, config: FitConfig) -> FitResult:
    """Fit a J-component mixture of regressions, keeping the best of ``n_starts``.

    Starts are ranked by the log-likelihood of their returned iterate, or by the
    penalized objective when ``select_by="objective"``.

    Starts that end on a degenerate partition still return the last valid iterate,
    but a start that stopped normally is preferred over one that did not.
    """
    J = config.n_components
    if data.n <= J * (data.p + 1):
        warnings.warn(f"n={data.n} is small for J={J} components with p={data.p}", stacklevel=2)
    mask = _mask(data, config)
    n_starts = 1 if isinstance(config.init, MixtureParams) and config.engine is Engine.EM \
        else config.n_starts
    seeds = np.random.SeedSequence(config.seed).spawn(n_starts)

    best = None
    best_key = None
    reasons = []
    for s, seq in enumerate(seeds):
        rng = np.random.default_rng(seq)
        chain, reason, ridge_iters = _one_start(data, config, rng, mask)
        reasons.append(reason)
        if chain is None:
            continue
        score = chain.loglik if config.select_by == "loglik" else chain.objective
        key = (chain.stop != K.STOP_DEGENERATE, score)
        if best_key is None or key > best_key:
            best, best_key = (s, chain, ridge_iters), key
    if best is None:
        raise FitError("every start failed", reasons)

    s, chain, ridge_iters = best
    params = MixtureParams(chain.pi, chain.B, chain.s2)
    n_it = chain.iterations
    method = config.method
    if method is Method.ML:
        kind = PenaltyKind.NONE
    elif method is Method.RIDGE:
        kind = PenaltyKind.RIDGE
    else:
        kind = PenaltyKind.LIU_TYPE
    penalty = PenaltySpec(kind=kind, k=chain.ks.copy(), d=chain.ds.copy(), plugin=chain.P.copy(),
                          mask=mask)
    return FitResult(
        params=params,
        objective=chain.objective,
        objective_trace=chain.obj_tr[:n_it].copy(),
        loglik_trace=chain.ll_tr[:n_it + 1].copy(),
        k_trace=chain.k_tr[:n_it].copy(),
        d_trace=chain.d_tr[:n_it].copy(),
        converged=chain.stop == K.STOP_TOL,
        stop_reason=_STOP[chain.stop],
        iterations=n_it,
        responsibilities_final=responsibilities(data, params),
        penalty=penalty,
        config=config,
        variance_floor_hit=bool(np.any(params.variances <= config.variance_floor * (1 + 1e-9))),
        start_reasons=reasons,
        best_start=s,
        ridge_stage_iterations=ridge_iters,
    )
