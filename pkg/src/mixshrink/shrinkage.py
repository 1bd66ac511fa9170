"""Penalty-parameter rules and per-component M-step solvers (ML, ridge, Liu-type)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import (
    DimensionError,
    MixShrinkError,
    RankDeficientError,
    SingularSystemError,
    ZeroResponsibilityError,
)
from .model import VARIANCE_FLOOR
from .numerics import WeightedDesign

EPS_K = K.EPS_K


class PluginKind(str, enum.Enum):
    ML = "ml"
    RIDGE = "ridge"


@dataclass(frozen=True)
class ComponentUpdate:
    beta: np.ndarray
    sigma2: float
    k_used: float = 0.0
    d_used: float = 0.0
    plugin: np.ndarray | None = None


def _check_mass(tau_col):
    w = np.asarray(tau_col, dtype=float)
    if w.ndim == 1 and np.all(np.isfinite(w)) and np.all(w >= 0) and w.sum() < K.MIN_WEIGHT:
        raise ZeroResponsibilityError("component has zero total responsibility")


def _prepare(X, y, tau_col):
    _check_mass(tau_col)
    design = WeightedDesign(X, tau_col)
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if y.shape != (design.n,):
        raise DimensionError(f"y must have length {design.n}")
    X = np.ascontiguousarray(design.X)
    A, b = K.cross_products(X, y, design.w)
    lam, U = K.eig_desc(A)
    return X, y, design.w, A, b, lam, U


def _rank_check(lam, p):
    if not lam[0] > 0 or lam[-1] <= K.RANK_TOL * lam[0]:
        rank = int(np.sum(lam > K.RANK_TOL * max(lam[0], 0.0))) if lam[0] > 0 else 0
        raise RankDeficientError(rank, p)


def _sigma2(X, y, w, beta, floor):
    return max(floor, K.weighted_rss(X, y, w, beta) / w.sum())


def ml_component_update(X, y, tau_col, variance_floor: float = VARIANCE_FLOOR) -> ComponentUpdate:
    """Unpenalized weighted least squares with the responsibility-weighted variance."""
    X, y, w, A, b, lam, U = _prepare(X, y, tau_col)
    _rank_check(lam, X.shape[1])
    beta = K.eig_solve(lam, U, b, 0.0, False)
    return ComponentUpdate(beta, _sigma2(X, y, w, beta, variance_floor))


def ridge_k_hkp(beta_ml, sigma2_ml: float, p: int | None = None) -> float:
    """Hoerl-Kennard plug-in ``p * sigma2 / beta'beta``."""
    beta_ml = np.asarray(beta_ml, dtype=float)
    bb = float(beta_ml @ beta_ml)
    if not bb > 0:
        raise MixShrinkError("HKP rule undefined for a zero coefficient vector")
    p = beta_ml.shape[0] if p is None else p
    return p * float(sigma2_ml) / bb


def ridge_component_update(X, y, tau_col, k: float,
                           variance_floor: float = VARIANCE_FLOOR) -> ComponentUpdate:
    if k < 0:
        raise ValueError("k must be non-negative")
    X, y, w, A, b, lam, U = _prepare(X, y, tau_col)
    if k == 0:
        try:
            _rank_check(lam, X.shape[1])
        except RankDeficientError as exc:
            raise SingularSystemError("singular system at k = 0; use a positive k") from exc
    beta = K.eig_solve(lam, U, b, float(k), False)
    return ComponentUpdate(beta, _sigma2(X, y, w, beta, variance_floor), k_used=float(k))


def lt_k_eigen(eigenvalues) -> float:
    """``(lambda_1 - 100 lambda_p) / 99`` clamped below at ``EPS_K``.

    Zero once the condition number is at most 100.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    if not lam[0] > 0:
        raise ValueError("largest eigenvalue must be positive")
    return float(K.lt_k_from_eigen(np.ascontiguousarray(lam)))


def _d_inputs(eigenvalues, alpha, sigma2, k):
    lam = np.ascontiguousarray(np.asarray(eigenvalues, dtype=float))
    alpha = np.ascontiguousarray(np.asarray(alpha, dtype=float))
    if lam.shape != alpha.shape or lam.ndim != 1:
        raise DimensionError("eigenvalues and alpha must be vectors of equal length")
    if not k > 0:
        raise ValueError("k must be positive")
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    return lam, alpha, float(sigma2), float(k)


def lt_d_optimal(eigenvalues, alpha, sigma2: float, k: float,
                 plugin_kind: PluginKind | str = PluginKind.RIDGE) -> float:
    """MSE-minimizing Liu-type ``d`` for a fixed ``k`` and a given plug-in kind."""
    lam, alpha, sigma2, k = _d_inputs(eigenvalues, alpha, sigma2, k)
    if PluginKind(plugin_kind) is PluginKind.ML:
        d = K.d_optimal_ml(lam, alpha, sigma2, k)
    else:
        d = K.d_optimal_ridge(lam, alpha, sigma2, k)
    if not np.isfinite(d):
        raise MixShrinkError("optimal d has a zero denominator")
    return float(d)


def lt_d_practical(eigenvalues, alpha_ridge, sigma2_ridge: float, k: float,
                   literal: bool = False) -> float:
    """Plug-in ``d`` from ridge estimates.

    With ``literal=True`` the alternative display (``(lam+k)^2`` and ``sigma^4`` in
    the denominator) is evaluated instead, for comparison only.
    """
    lam, alpha, sigma2, k = _d_inputs(eigenvalues, alpha_ridge, sigma2_ridge, k)
    if literal:
        d = K.d_literal_denominator(lam, alpha, sigma2, k)
    else:
        d = K.d_optimal_ridge(lam, alpha, sigma2, k)
    if not np.isfinite(d):
        raise MixShrinkError("practical d has a zero denominator")
    return float(d)


def lt_component_update(X, y, tau_col, k: float, d: float, plugin_beta,
                        variance_floor: float = VARIANCE_FLOOR) -> ComponentUpdate:
    """``(X'WX + kI)^{-1} (X'Wy - d * plugin_beta)`` and its weighted variance."""
    if not k > 0:
        raise ValueError("Liu-type update needs k > 0")
    X, y, w, A, b, lam, U = _prepare(X, y, tau_col)
    plugin = np.asarray(plugin_beta, dtype=float)
    if plugin.shape != (X.shape[1],):
        raise DimensionError(f"plugin_beta must have length {X.shape[1]}")
    beta = K.eig_solve(lam, U, b - d * plugin, float(k), False)
    return ComponentUpdate(beta, _sigma2(X, y, w, beta, variance_floor),
                           k_used=float(k), d_used=float(d), plugin=plugin.copy())


def scheduled_lt_update(X, y, tau_col, k: float | None = None, literal: bool = False,
                        variance_floor: float = VARIANCE_FLOOR) -> ComponentUpdate:
    """The engines' Liu-type step: ridge plug-in, practical ``d``, then the LT solve.

    ``k=None`` takes k from the eigenvalue rule (iterative schedule); otherwise the
    given (frozen) k is used.
    """
    _check_mass(tau_col)
    design = WeightedDesign(X, tau_col)
    X = np.ascontiguousarray(design.X)
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if y.shape != (design.n,):
        raise DimensionError(f"y must have length {design.n}")
    method = K.LT_ITR if k is None else K.LT_HKP
    mask = np.ones(X.shape[1])
    st, beta, s2, k_used, d, plugin = K.component_update(
        X, y, design.w, method, -1.0 if k is None else float(k), mask, True,
        variance_floor, literal)
    if st == K.DEGENERATE:
        raise ZeroResponsibilityError("component update is degenerate")
    if st == K.NONFINITE:
        raise MixShrinkError("Liu-type update produced non-finite values")
    return ComponentUpdate(beta, s2, k_used=k_used, d_used=d, plugin=plugin)
