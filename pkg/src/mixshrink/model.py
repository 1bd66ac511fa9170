"""Mixture-of-regressions model: parameters, densities, likelihoods, responsibilities."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DimensionError, NonFiniteError, PenaltyError

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class MixtureParams:
    """Mixing proportions, per-component coefficients (J x p) and variances."""

    weights: np.ndarray
    coeffs: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        B = np.asarray(self.coeffs, dtype=float)
        if B.ndim == 1:
            B = B[None, :]
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        J = w.shape[0]
        if w.ndim != 1 or B.ndim != 2 or B.shape[0] != J or v.shape != (J,):
            raise DimensionError(
                f"inconsistent shapes: weights {w.shape}, coeffs {B.shape}, variances {v.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(B)) and np.all(np.isfinite(v))):
            raise NonFiniteError("mixture parameters contain non-finite entries")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixing proportions must sum to 1, got {w.sum()!r}")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("mixing proportions must lie in [0, 1]")
        if np.any(v < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError(f"component variances must be >= {VARIANCE_FLOOR}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "coeffs", np.ascontiguousarray(B))
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.coeffs.shape[1]

    def permuted(self, perm) -> "MixtureParams":
        """Component ``j`` of the result is component ``perm[j]`` of ``self``."""
        perm = np.asarray(perm, dtype=int)
        return MixtureParams(self.weights[perm], self.coeffs[perm], self.variances[perm])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "coeffs": self.coeffs.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureParams":
        return cls(d["weights"], d["coeffs"], d["variances"])


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` and design ``X``; when ``intercept`` is set, column 0 is all ones."""

    y: np.ndarray
    X: np.ndarray
    intercept: bool = False
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = np.ascontiguousarray(X)
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"y has shape {y.shape} but X has shape {X.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise NonFiniteError("dataset contains non-finite values")
        if X.shape[0] <= X.shape[1]:
            raise DimensionError(f"need n > p, got n={X.shape[0]}, p={X.shape[1]}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @classmethod
    def from_covariates(cls, y, covariates, intercept: bool = True, names=()) -> "Dataset":
        Z = np.asarray(covariates, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if intercept:
            Z = np.column_stack([np.ones(Z.shape[0]), Z])
            names = ("intercept", *names) if names else ()
        return cls(y, Z, intercept=intercept, names=tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.X[idx], self.intercept, self.names)


class PenaltyKind(str, enum.Enum):
    NONE = "none"
    RIDGE = "ridge"
    LIU_TYPE = "liu-type"


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind = PenaltyKind.NONE
    k: np.ndarray | None = None
    d: np.ndarray | None = None
    plugin: np.ndarray | None = None
    mask: np.ndarray | None = None  # 0 for unpenalized coordinates (e.g. the intercept)


def _check(data: Dataset, params: MixtureParams):
    if data.p != params.p:
        raise DimensionError(f"dataset has p={data.p} but parameters have p={params.p}")


def component_logpdf(x_row, y_i: float, beta, sigma2: float) -> float:
    """Log normal density of ``y_i`` with mean ``x_row @ beta`` and variance ``sigma2``."""
    if sigma2 < VARIANCE_FLOOR * (1 - 1e-12):
        raise ValueError(f"sigma2 must be >= {VARIANCE_FLOOR}")
    r = float(y_i) - float(np.dot(x_row, beta))
    return -0.5 * (np.log(2.0 * np.pi * sigma2) + r * r / sigma2)


def log_likelihood(data: Dataset, params: MixtureParams) -> float:
    _check(data, params)
    _, ll = K.e_step(data.X, data.y, params.weights, params.coeffs, params.variances)
    return float(ll)


def penalty_value(params: MixtureParams, penalty: PenaltySpec) -> float:
    kind = PenaltyKind(penalty.kind)
    if kind is PenaltyKind.NONE:
        return 0.0
    J, p = params.coeffs.shape
    mask = np.ones(p) if penalty.mask is None else np.asarray(penalty.mask, dtype=float)
    k = np.broadcast_to(np.asarray(penalty.k, dtype=float), (J,))
    if np.any(k < 0):
        raise PenaltyError("penalty parameters k must be non-negative")
    B = params.coeffs * mask
    if kind is PenaltyKind.RIDGE:
        return float(0.5 * np.sum(k * np.sum(B ** 2, axis=1)))
    if np.any(k == 0):
        raise PenaltyError("Liu-type penalty needs k > 0 in every component")
    d = np.broadcast_to(np.asarray(penalty.d, dtype=float), (J,))
    plugin = np.asarray(penalty.plugin, dtype=float).reshape(J, p) * mask
    resid = (-d / np.sqrt(k))[:, None] * plugin - np.sqrt(k)[:, None] * B
    return float(0.5 * np.sum(resid ** 2))


def penalized_log_likelihood(data: Dataset, params: MixtureParams, penalty: PenaltySpec) -> float:
    return log_likelihood(data, params) - penalty_value(params, penalty)


def responsibilities(data: Dataset, params: MixtureParams) -> np.ndarray:
    """Posterior membership weights (n x J), normalized in log space."""
    _check(data, params)
    tau, _ = K.e_step(data.X, data.y, params.weights, params.coeffs, params.variances)
    return tau


def q_decomposition(data: Dataset, tau, params: MixtureParams) -> tuple[float, float]:
    """Expected complete-data log-likelihood split into its proportion and density parts."""
    _check(data, params)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (data.n, params.n_components):
        raise DimensionError(f"tau must have shape {(data.n, params.n_components)}")
    with np.errstate(divide="ignore"):
        logpi = np.log(params.weights)
    q1 = float(np.sum(np.where(tau > 0, tau * logpi, 0.0)))
    resid = data.y[:, None] - data.X @ params.coeffs.T
    logphi = -0.5 * (np.log(2.0 * np.pi * params.variances) + resid ** 2 / params.variances)
    q2 = float(np.sum(tau * logphi))
    return q1, q2
