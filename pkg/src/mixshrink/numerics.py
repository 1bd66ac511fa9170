"""Weighted linear-algebra kernels used by every estimator.

All routines take a weighted design ``(X, w)`` where ``w`` is the diagonal of the
component weight matrix. Nothing here inverts a matrix explicitly; regularized
systems are solved through a Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    DimensionError,
    InvalidWeightsError,
    NonFiniteError,
    NotSymmetricError,
    RankDeficientError,
    SingularSystemError,
)

RANK_TOL = 1e-12
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class WeightedDesign:
    X: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"X must be a non-empty 2-d matrix, got shape {X.shape}")
        if w.ndim != 1 or w.shape[0] != X.shape[0]:
            raise DimensionError(f"weights must have length {X.shape[0]}, got shape {w.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("design matrix contains non-finite entries")
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("weights contain non-finite entries")
        if np.any(w < 0):
            raise InvalidWeightsError("weights must be non-negative")
        if not np.any(w > 0):
            raise InvalidWeightsError("at least one weight must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order with matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class CanonicalBasis:
    eigen: EigenSystem
    v1: np.ndarray


def _as_vector(v, name: str, length: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return v


def weighted_cross_products(design: WeightedDesign, y) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X^T W X, X^T W y)``."""
    y = _as_vector(y, "y", design.n)
    Xw = design.X * design.w[:, None]
    xtwx = Xw.T @ design.X
    xtwx = 0.5 * (xtwx + xtwx.T)
    return xtwx, Xw.T @ y


def symmetric_eigen(A) -> EigenSystem:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotSymmetricError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(vals)[::-1]
    return EigenSystem(eigenvalues=vals[order], eigenvectors=vecs[:, order])


def canonical_basis(design: WeightedDesign) -> CanonicalBasis:
    """Eigenbasis of ``X^T W X`` plus ``V1 = W^{1/2} X U Lambda^{-1/2}``.

    ``V1`` is recovered from the p x p problem rather than by decomposing the
    n x n matrix ``W^{1/2} X X^T W^{1/2}``; both share the positive spectrum.
    """
    xtwx = (design.X * design.w[:, None]).T @ design.X
    eig = symmetric_eigen(0.5 * (xtwx + xtwx.T))
    lam = eig.eigenvalues
    if lam[0] <= 0 or lam[-1] <= RANK_TOL * lam[0]:
        rank = int(np.sum(lam > RANK_TOL * max(lam[0], 0.0))) if lam[0] > 0 else 0
        raise RankDeficientError(rank, design.p)
    v1 = (np.sqrt(design.w)[:, None] * design.X) @ eig.eigenvectors / np.sqrt(lam)
    return CanonicalBasis(eigen=eig, v1=v1)


def canonical_response(basis: CanonicalBasis, design: WeightedDesign, y) -> np.ndarray:
    """``Lambda^{1/2} V1^T W^{1/2} y``, the canonical right-hand side."""
    y = _as_vector(y, "y", design.n)
    return np.sqrt(basis.eigen.eigenvalues) * (basis.v1.T @ (np.sqrt(design.w) * y))


def canonical_ridge(basis: CanonicalBasis, design: WeightedDesign, y, k: float) -> np.ndarray:
    """Canonical weighted ridge coefficients; map back with ``U @ alpha``."""
    return canonical_response(basis, design, y) / (basis.eigen.eigenvalues + k)


def canonical_liu_type(basis: CanonicalBasis, design: WeightedDesign, y, k: float, d: float,
                       plugin_alpha) -> np.ndarray:
    """Canonical Liu-type coefficients for plug-in ``plugin_alpha = U^T beta_hat``."""
    plugin_alpha = _as_vector(plugin_alpha, "plugin_alpha", design.p)
    rhs = canonical_response(basis, design, y) - d * plugin_alpha
    return rhs / (basis.eigen.eigenvalues + k)


def ridge_solve(XtWX, rhs, k: float) -> np.ndarray:
    """Solve ``(XtWX + k I) beta = rhs`` by Cholesky factorization."""
    A = np.asarray(XtWX, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or rhs.shape != (A.shape[0],):
        raise DimensionError(f"incompatible shapes {A.shape} and {rhs.shape}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
        raise NonFiniteError("system contains non-finite entries")
    M = A + k * np.eye(A.shape[0])
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"regularized system is not positive definite at k={k}; use a positive k"
        ) from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= np.sqrt(RANK_TOL) * diag.max():
        raise SingularSystemError(
            f"regularized system is numerically singular at k={k}; use a positive k"
        )
    return linalg.cho_solve(factor, rhs, check_finite=False)
