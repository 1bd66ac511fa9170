"""Reference computations that avoid the library's own solver paths."""

import numpy as np


def wls_lstsq(X, y, w):
    """Weighted least squares through an SVD-based least-squares solve."""
    s = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(s[:, None] * X, s * y, rcond=None)
    return beta


def augmented_lstsq(X, y, w, k, target=None):
    """Minimize ||W^1/2 (y - X b)||^2 + ||target - sqrt(k) b||^2 by stacking rows.

    ``target = 0`` gives ridge; ``target = -(d / sqrt(k)) * plugin`` gives the Liu-type fit.
    """
    p = X.shape[1]
    s = np.sqrt(w)
    target = np.zeros(p) if target is None else target
    A = np.vstack([s[:, None] * X, np.sqrt(k) * np.eye(p)])
    rhs = np.concatenate([s * y, target])
    beta, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return beta


def liu_mse(lam, alpha, sigma2, k, d, plugin):
    """Exact MSE of the canonical Liu-type estimator for a fixed (k, d).

    With the ML estimate distributed N(alpha, sigma2 / lam) per coordinate, the
    estimator is c * alpha_ml for a per-coordinate factor c; MSE = sum (c-1)^2 alpha^2
    + c^2 sigma2 / lam.
    """
    lam = np.asarray(lam, float)
    alpha = np.asarray(alpha, float)
    if plugin == "ml":
        c = (lam - d) / (lam + k)
    else:
        c = lam * (lam + k - d) / (lam + k) ** 2
    return float(np.sum((c - 1.0) ** 2 * alpha ** 2 + c ** 2 * sigma2 / lam))


def conditioned_design(rng, n, p, cond, w):
    """X whose weighted cross-product X'WX has condition number ``cond``."""
    q1, _ = np.linalg.qr(rng.standard_normal((n, p)))
    q2, _ = np.linalg.qr(rng.standard_normal((p, p)))
    sv = np.sqrt(cond) ** -np.linspace(0.0, 1.0, p)
    Xw = q1 @ np.diag(sv) @ q2.T
    return Xw / np.sqrt(w)[:, None]


def mixture_loglik_direct(X, y, weights, coeffs, variances):
    """Plain (non log-space) evaluation, fine for small well-scaled toys."""
    dens = np.zeros((len(y), len(weights)))
    for j in range(len(weights)):
        r = y - X @ coeffs[j]
        dens[:, j] = weights[j] * np.exp(-0.5 * r ** 2 / variances[j]) / np.sqrt(
            2 * np.pi * variances[j])
    return float(np.sum(np.log(dens.sum(axis=1)))), dens / dens.sum(axis=1, keepdims=True)
