"""Compiled inner loops for the fitting engines.

The public functions in ``model``, ``shrinkage`` and ``engine`` validate inputs
and delegate here, so the Python API and the Monte-Carlo hot path run the same
code. Integer codes are used instead of enums because numba needs them.
"""

import numpy as np
from numba import njit

ML = 0
RIDGE = 1
LT_ITR = 2
LT_HKP = 3
ML_PINV = 4  # minimum-norm WLS, used only to build starting values

EM = 0
CEM = 1
SEM = 2

OK = 0
DEGENERATE = 1
NONFINITE = 2

STOP_TOL = 0
STOP_MAXITER = 1
STOP_DEGENERATE = 2
STOP_NONFINITE = 3

RANK_TOL = 1e-12
EPS_K = 1e-8
MIN_WEIGHT = 1e-10
LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def cross_products(X, y, w):
    n, p = X.shape
    A = np.zeros((p, p))
    b = np.zeros(p)
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        for a in range(p):
            xa = wi * X[i, a]
            b[a] += xa * y[i]
            for c in range(a, p):
                A[a, c] += xa * X[i, c]
    for a in range(p):
        for c in range(a + 1, p):
            A[c, a] = A[a, c]
    return A, b


@njit(cache=True)
def eig_desc(A):
    vals, vecs = np.linalg.eigh(A)
    p = vals.shape[0]
    lam = np.empty(p)
    U = np.empty((p, p))
    for m in range(p):
        lam[m] = vals[p - 1 - m]
        for a in range(p):
            U[a, m] = vecs[a, p - 1 - m]
    return lam, U


@njit(cache=True)
def row_dot(X, i, beta):
    acc = 0.0
    for a in range(beta.shape[0]):
        acc += X[i, a] * beta[a]
    return acc


@njit(cache=True)
def matvec(M, v, transpose):
    p = M.shape[0]
    out = np.zeros(p)
    for a in range(p):
        acc = 0.0
        for c in range(p):
            acc += (M[c, a] if transpose else M[a, c]) * v[c]
        out[a] = acc
    return out


@njit(cache=True)
def eig_solve(lam, U, rhs, k, pinv):
    """Solve ``(U diag(lam) U^T + k I) x = rhs``; ``pinv`` drops null directions."""
    p = lam.shape[0]
    coef = matvec(U, rhs, True)
    cutoff = RANK_TOL * lam[0]
    for m in range(p):
        denom = lam[m] + k
        if pinv and lam[m] <= cutoff:
            coef[m] = 0.0
        else:
            coef[m] = coef[m] / denom
    return matvec(U, coef, False)


@njit(cache=True)
def reg_solve(A, lam, U, rhs, k, mask, full_mask):
    if full_mask or k == 0.0:
        return eig_solve(lam, U, rhs, k, False)
    M = A.copy()
    for a in range(A.shape[0]):
        M[a, a] += k * mask[a]
    return np.linalg.solve(M, rhs)


@njit(cache=True)
def weighted_rss(X, y, w, beta):
    n = X.shape[0]
    total = 0.0
    for i in range(n):
        if w[i] == 0.0:
            continue
        r = y[i] - row_dot(X, i, beta)
        total += w[i] * r * r
    return total


@njit(cache=True)
def d_optimal_ml(lam, alpha, s2, k):
    num = 0.0
    den = 0.0
    for m in range(lam.shape[0]):
        lk = lam[m] + k
        num += (s2 - k * alpha[m] ** 2) / lk ** 2
        den += (lam[m] * alpha[m] ** 2 + s2) / (lam[m] * lk ** 2)
    if den == 0.0:
        return np.nan
    return num / den


@njit(cache=True)
def d_optimal_ridge(lam, alpha, s2, k):
    num = 0.0
    den = 0.0
    for m in range(lam.shape[0]):
        lk = lam[m] + k
        num += lam[m] * (s2 - k * alpha[m] ** 2) / lk ** 3
        den += lam[m] * (lam[m] * alpha[m] ** 2 + s2) / lk ** 4
    if den == 0.0:
        return np.nan
    return num / den


@njit(cache=True)
def d_literal_denominator(lam, alpha, s2, k):
    # the d-hat display as typeset: (lam+k)^2 and sigma^4 in the denominator
    num = 0.0
    den = 0.0
    for m in range(lam.shape[0]):
        lk = lam[m] + k
        num += lam[m] * (s2 - k * alpha[m] ** 2) / lk ** 3
        den += (lam[m] * alpha[m] ** 2 + s2 * s2) / lk ** 2
    if den == 0.0:
        return np.nan
    return num / den


@njit(cache=True)
def lt_k_from_eigen(lam):
    k = (lam[0] - 100.0 * lam[lam.shape[0] - 1]) / 99.0
    return max(EPS_K, k)


@njit(cache=True)
def component_update(X, y, w, method, k_fixed, mask, full_mask, floor, d_literal):
    """One component's M-step. Returns (status, beta, sigma2, k, d, plugin).

    ``k_fixed < 0`` means "estimate k" for RIDGE; LT_HKP always uses ``k_fixed``.
    """
    p = X.shape[1]
    beta = np.zeros(p)
    plugin = np.zeros(p)
    sw = 0.0
    for i in range(w.shape[0]):
        sw += w[i]
    if sw < MIN_WEIGHT:
        return DEGENERATE, beta, floor, 0.0, 0.0, plugin
    A, b = cross_products(X, y, w)
    lam, U = eig_desc(A)
    if not lam[0] > 0.0:
        return DEGENERATE, beta, floor, 0.0, 0.0, plugin
    rank_deficient = lam[p - 1] <= RANK_TOL * lam[0]
    k = 0.0
    d = 0.0

    if method == ML:
        if rank_deficient:
            return DEGENERATE, beta, floor, 0.0, 0.0, plugin
        beta = eig_solve(lam, U, b, 0.0, False)
    elif method == ML_PINV:
        beta = eig_solve(lam, U, b, 0.0, True)
    elif method == RIDGE:
        if k_fixed >= 0.0:
            k = k_fixed
        else:
            b_ml = eig_solve(lam, U, b, 0.0, True)
            s2_ml = max(floor, weighted_rss(X, y, w, b_ml) / sw)
            bb = 0.0
            n_pen = 0.0
            for a in range(p):
                bb += mask[a] * b_ml[a] ** 2
                n_pen += mask[a]
            if not bb > 0.0:
                return DEGENERATE, beta, floor, 0.0, 0.0, plugin
            k = n_pen * s2_ml / bb
        if rank_deficient and k <= 0.0:
            return DEGENERATE, beta, floor, 0.0, 0.0, plugin
        beta = reg_solve(A, lam, U, b, k, mask, full_mask)
    else:
        if method == LT_ITR:
            k = lt_k_from_eigen(lam)
        else:
            k = k_fixed
        b_r = reg_solve(A, lam, U, b, k, mask, full_mask)
        s2_r = max(floor, weighted_rss(X, y, w, b_r) / sw)
        alpha_r = matvec(U, b_r, True)
        if d_literal:
            d = d_literal_denominator(lam, alpha_r, s2_r, k)
        else:
            d = d_optimal_ridge(lam, alpha_r, s2_r, k)
        if not np.isfinite(d):
            return NONFINITE, beta, floor, k, 0.0, plugin
        rhs = b.copy()
        for a in range(p):
            rhs[a] -= d * mask[a] * b_r[a]
        beta = reg_solve(A, lam, U, rhs, k, mask, full_mask)
        plugin = b_r

    for a in range(p):
        if not np.isfinite(beta[a]):
            return NONFINITE, beta, floor, k, d, plugin
    s2 = max(floor, weighted_rss(X, y, w, beta) / sw)
    return OK, beta, s2, k, d, plugin


@njit(cache=True)
def m_step(X, y, W, method, k_fixed, mask, full_mask, floor, d_literal):
    """Per-component updates for weight matrix ``W`` (n x J)."""
    p = X.shape[1]
    J = W.shape[1]
    B = np.zeros((J, p))
    s2 = np.zeros(J)
    ks = np.zeros(J)
    ds = np.zeros(J)
    P = np.zeros((J, p))
    for j in range(J):
        w = np.ascontiguousarray(W[:, j])
        st, beta, v, k, d, plugin = component_update(
            X, y, w, method, k_fixed[j], mask, full_mask, floor, d_literal)
        if st != OK:
            return st, B, s2, ks, ds, P
        B[j] = beta
        s2[j] = v
        ks[j] = k
        ds[j] = d
        P[j] = plugin
    return OK, B, s2, ks, ds, P


@njit(cache=True)
def log_joint(X, y, pi, B, s2):
    n = X.shape[0]
    J = pi.shape[0]
    out = np.empty((n, J))
    for j in range(J):
        lp = np.log(pi[j]) if pi[j] > 0.0 else -np.inf
        c = lp - 0.5 * (LOG_2PI + np.log(s2[j]))
        for i in range(n):
            r = y[i] - row_dot(X, i, B[j])
            out[i, j] = c - 0.5 * r * r / s2[j]
    return out


@njit(cache=True)
def e_step(X, y, pi, B, s2):
    """Responsibilities and observed-data log-likelihood, both in log space."""
    lj = log_joint(X, y, pi, B, s2)
    n, J = lj.shape
    tau = np.empty((n, J))
    ll = 0.0
    for i in range(n):
        m = lj[i, 0]
        for j in range(1, J):
            if lj[i, j] > m:
                m = lj[i, j]
        s = 0.0
        for j in range(J):
            s += np.exp(lj[i, j] - m)
        lse = m + np.log(s)
        ll += lse
        for j in range(J):
            tau[i, j] = np.exp(lj[i, j] - lse)
        t = 0.0
        for j in range(J):
            t += tau[i, j]
        for j in range(J):
            tau[i, j] /= t
    return tau, ll


@njit(cache=True)
def penalty(method, B, ks, ds, P, mask):
    J, p = B.shape
    total = 0.0
    if method == RIDGE:
        for j in range(J):
            for a in range(p):
                total += 0.5 * ks[j] * mask[a] * B[j, a] ** 2
    elif method == LT_ITR or method == LT_HKP:
        for j in range(J):
            rk = np.sqrt(ks[j])
            for a in range(p):
                r = (-ds[j] / rk) * P[j, a] - rk * B[j, a]
                total += 0.5 * mask[a] * r * r
    return total


@njit(cache=True)
def c_step(tau, u):
    """Hard assignment to the maximum responsibility; exact ties broken by ``u``."""
    n, J = tau.shape
    assign = np.empty(n, dtype=np.int64)
    cand = np.empty(J, dtype=np.int64)
    for i in range(n):
        m = tau[i, 0]
        for j in range(1, J):
            if tau[i, j] > m:
                m = tau[i, j]
        c = 0
        for j in range(J):
            if tau[i, j] == m:
                cand[c] = j
                c += 1
        pick = int(u[i] * c)
        if pick >= c:
            pick = c - 1
        assign[i] = cand[pick]
    return assign


@njit(cache=True)
def s_step(tau, u):
    """One multinomial draw per row by inverse CDF of ``u``."""
    n, J = tau.shape
    assign = np.empty(n, dtype=np.int64)
    for i in range(n):
        acc = 0.0
        chosen = J - 1
        for j in range(J):
            acc += tau[i, j]
            if u[i] < acc:
                chosen = j
                break
        while tau[i, chosen] == 0.0 and chosen > 0:
            chosen -= 1
        assign[i] = chosen
    return assign


@njit(cache=True)
def partition_weights(tau, assign):
    n, J = tau.shape
    W = np.zeros((n, J))
    counts = np.zeros(J, dtype=np.int64)
    for i in range(n):
        j = assign[i]
        W[i, j] = tau[i, j]
        counts[j] += 1
    return W, counts


@njit(cache=True)
def run_chain(X, y, engine, method, pi0, B0, s20, k_fixed, uniforms, tol, max_iter,
              floor, mask, full_mask, d_literal, min_count):
    """Alternate E-, (C-/S-) and M-steps from ``(pi0, B0, s20)``.

    A partition with fewer than ``min_count`` members, or a failed M-step, stops
    the chain and the previous iterate is kept.
    SEM returns the highest-objective iterate of the chain, the other engines the
    last one; the final tuple entry indexes the returned iterate in the traces.
    """
    n, p = X.shape
    J = pi0.shape[0]
    pi = pi0.copy()
    B = B0.copy()
    s2 = s20.copy()
    ks = np.zeros(J)
    ds = np.zeros(J)
    P = np.zeros((J, p))

    obj_tr = np.full(max_iter, np.nan)
    ll_tr = np.full(max_iter + 1, np.nan)
    k_tr = np.zeros((max_iter, J))
    d_tr = np.zeros((max_iter, J))

    best_obj = -np.inf
    best_it = -1
    best_pi = pi.copy()
    best_B = B.copy()
    best_s2 = s2.copy()
    best_ks = ks.copy()
    best_ds = ds.copy()
    best_P = P.copy()

    tau, ll = e_step(X, y, pi, B, s2)
    ll_tr[0] = ll
    prev = np.nan
    stop = STOP_MAXITER
    iters = 0
    counts = np.zeros(J, dtype=np.int64)
    for it in range(max_iter):
        if engine == EM:
            W = tau
        else:
            if engine == CEM:
                assign = c_step(tau, uniforms[it])
            else:
                assign = s_step(tau, uniforms[it])
            W, counts = partition_weights(tau, assign)
            if counts.min() < min_count:
                stop = STOP_DEGENERATE
                break
        st, nB, ns2, nks, nds, nP = m_step(X, y, W, method, k_fixed, mask, full_mask,
                                          floor, d_literal)
        if st == DEGENERATE:
            stop = STOP_DEGENERATE
            break
        if st == NONFINITE:
            stop = STOP_NONFINITE
            break
        npi = np.empty(J)
        if engine == EM:
            for j in range(J):
                npi[j] = tau[:, j].sum() / n
        else:
            for j in range(J):
                npi[j] = counts[j] / n
        if npi.min() < MIN_WEIGHT:
            stop = STOP_DEGENERATE
            break
        pi = npi
        B = nB
        s2 = ns2
        ks = nks
        ds = nds
        P = nP
        tau, ll = e_step(X, y, pi, B, s2)
        obj = ll - penalty(method, B, ks, ds, P, mask)
        if not np.isfinite(obj):
            stop = STOP_NONFINITE
            iters = it + 1
            break
        obj_tr[it] = obj
        ll_tr[it + 1] = ll
        k_tr[it] = ks
        d_tr[it] = ds
        iters = it + 1
        if obj > best_obj:
            best_obj = obj
            best_it = it
            best_pi = pi.copy()
            best_B = B.copy()
            best_s2 = s2.copy()
            best_ks = ks.copy()
            best_ds = ds.copy()
            best_P = P.copy()
        if it > 0 and abs(obj - prev) < tol:
            stop = STOP_TOL
            break
        prev = obj
    if engine == SEM and best_it >= 0:
        return (stop, iters, best_pi, best_B, best_s2, best_ks, best_ds, best_P,
                obj_tr, ll_tr, k_tr, d_tr, best_it)
    return stop, iters, pi, B, s2, ks, ds, P, obj_tr, ll_tr, k_tr, d_tr, iters - 1
