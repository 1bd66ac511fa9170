import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixshrink.errors import (
    DimensionError,
    InvalidWeightsError,
    NonFiniteError,
    NotSymmetricError,
    RankDeficientError,
    SingularSystemError,
)
from mixshrink.numerics import (
    WeightedDesign,
    canonical_basis,
    canonical_liu_type,
    canonical_ridge,
    ridge_solve,
    symmetric_eigen,
    weighted_cross_products,
)

from _oracles import augmented_lstsq, conditioned_design, wls_lstsq


class TestWeightedDesign:
    def test_rejects_all_zero_weights(self):
        with pytest.raises(InvalidWeightsError):
            WeightedDesign(np.eye(2), np.zeros(2))

    def test_rejects_negative_weights(self):
        with pytest.raises(InvalidWeightsError):
            WeightedDesign(np.eye(2), np.array([1.0, -0.1]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(DimensionError):
            WeightedDesign(np.eye(3), np.ones(2))

    def test_rejects_nan(self):
        X = np.eye(2)
        X[0, 1] = np.nan
        with pytest.raises(NonFiniteError):
            WeightedDesign(X, np.ones(2))


class TestCrossProducts:
    def test_identity(self):
        A, b = weighted_cross_products(WeightedDesign(np.eye(2), np.ones(2)), [3.0, 4.0])
        np.testing.assert_allclose(A, np.eye(2))
        np.testing.assert_allclose(b, [3.0, 4.0])

    def test_weighted_column(self):
        design = WeightedDesign(np.ones((3, 1)), np.array([0.5, 0.25, 0.25]))
        A, b = weighted_cross_products(design, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(A, [[1.0]])
        np.testing.assert_allclose(b, [2.0])

    def test_y_length_checked(self):
        with pytest.raises(DimensionError):
            weighted_cross_products(WeightedDesign(np.eye(2), np.ones(2)), [1.0])

    @given(st.integers(0, 10_000))
    def test_matches_dense_weight_matrix(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((7, 3))
        w = rng.uniform(0, 2, 7)
        y = rng.standard_normal(7)
        A, b = weighted_cross_products(WeightedDesign(X, w), y)
        np.testing.assert_allclose(A, X.T @ np.diag(w) @ X, atol=1e-12)
        np.testing.assert_allclose(b, X.T @ np.diag(w) @ y, atol=1e-12)
        assert np.array_equal(A, A.T)


class TestSymmetricEigen:
    def test_diagonal(self):
        e = symmetric_eigen(np.diag([1.0, 4.0]))
        np.testing.assert_allclose(e.eigenvalues, [4.0, 1.0])
        np.testing.assert_allclose(np.abs(e.eigenvectors), [[0, 1], [1, 0]])

    def test_two_by_two(self):
        # characteristic polynomial (2 - t)^2 - 1 has roots 3 and 1
        e = symmetric_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(e.eigenvalues, [3.0, 1.0])

    def test_zero_matrix(self):
        e = symmetric_eigen(np.zeros((3, 3)))
        np.testing.assert_allclose(e.eigenvalues, 0.0)
        np.testing.assert_allclose(e.eigenvectors.T @ e.eigenvectors, np.eye(3), atol=1e-12)

    def test_not_symmetric(self):
        with pytest.raises(NotSymmetricError):
            symmetric_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))

    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_reconstruction_and_order(self, seed, p):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((p, p))
        A = M @ M.T
        e = symmetric_eigen(A)
        U, lam = e.eigenvectors, e.eigenvalues
        assert np.all(np.diff(lam) <= 0)
        np.testing.assert_allclose(U.T @ U, np.eye(p), atol=1e-8)
        recon = U @ np.diag(lam) @ U.T
        assert np.linalg.norm(recon - A) <= 1e-8 * max(1.0, np.linalg.norm(A))


class TestCanonicalBasis:
    def test_identity_design(self):
        b = canonical_basis(WeightedDesign(np.eye(3), np.ones(3)))
        np.testing.assert_allclose(b.eigen.eigenvalues, 1.0)
        np.testing.assert_allclose(np.abs(b.v1 @ b.eigen.eigenvectors.T), np.eye(3), atol=1e-12)

    def test_reconstruction_against_svd(self, rng):
        X = rng.standard_normal((6, 2))
        design = WeightedDesign(X, np.ones(6))
        b = canonical_basis(design)
        recon = b.v1 @ np.diag(np.sqrt(b.eigen.eigenvalues)) @ b.eigen.eigenvectors.T
        assert np.linalg.norm(X - recon) < 1e-8
        np.testing.assert_allclose(b.v1.T @ b.v1, np.eye(2), atol=1e-8)
        # singular values of X are the square roots of the eigenvalues
        np.testing.assert_allclose(np.sqrt(b.eigen.eigenvalues), np.linalg.svd(X)[1], rtol=1e-10)

    def test_zero_weight_row_drops_out(self):
        X = np.array([[1.0, 0.0], [0.0, 2.0], [5.0, 7.0]])
        w = np.array([1.0, 1.0, 0.0])
        b = canonical_basis(WeightedDesign(X, w))
        Xw = np.sqrt(w)[:, None] * X
        recon = b.v1 @ np.diag(np.sqrt(b.eigen.eigenvalues)) @ b.eigen.eigenvectors.T
        np.testing.assert_allclose(recon, Xw, atol=1e-12)
        np.testing.assert_allclose(np.sort(b.eigen.eigenvalues), [1.0, 4.0])

    def test_rank_deficient_names_rank(self):
        X = np.column_stack([np.ones(5), 2 * np.ones(5), np.arange(5.0)])
        with pytest.raises(RankDeficientError) as info:
            canonical_basis(WeightedDesign(X, np.ones(5)))
        assert info.value.rank == 2 and info.value.p == 3


class TestRidgeSolve:
    def test_identity(self):
        np.testing.assert_allclose(ridge_solve(np.eye(2), [2.0, 2.0], 1.0), [1.0, 1.0])

    def test_unregularized(self):
        np.testing.assert_allclose(ridge_solve(np.diag([2.0, 1.0]), [2.0, 1.0], 0.0), [1.0, 1.0])

    def test_near_collinear_closed_form(self):
        A = np.array([[1.0, 0.999], [0.999, 1.0]])
        k = 0.1
        # (A + kI)^{-1} for [[a, b], [b, a]] is [[a, -b], [-b, a]] / (a^2 - b^2)
        a, b = 1.1, 0.999
        inv = np.array([[a, -b], [-b, a]]) / (a * a - b * b)
        np.testing.assert_allclose(ridge_solve(A, [1.0, 1.0], k), inv @ [1.0, 1.0], rtol=1e-12)

    def test_singular_needs_positive_k(self):
        with pytest.raises(SingularSystemError, match="positive k"):
            ridge_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), [1.0, 1.0], 0.0)

    @given(st.integers(0, 10_000))
    def test_norm_shrinks_with_k(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((4, 4))
        A = M @ M.T + 1e-3 * np.eye(4)
        rhs = rng.standard_normal(4)
        norms = [np.linalg.norm(ridge_solve(A, rhs, k)) for k in (0.0, 0.01, 0.1, 1.0, 10.0)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))

    @given(st.integers(0, 10_000))
    def test_k_zero_is_least_squares(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((10, 3))
        w = rng.uniform(0.1, 2, 10)
        y = rng.standard_normal(10)
        A, b = weighted_cross_products(WeightedDesign(X, w), y)
        np.testing.assert_allclose(ridge_solve(A, b, 0.0), wls_lstsq(X, y, w), rtol=1e-8)


@given(st.integers(0, 100_000), st.sampled_from([1e0, 1e3, 1e6, 1e8]),
       st.floats(1e-4, 10.0), st.floats(-5.0, 5.0))
def test_canonical_routes_match_stacked_least_squares(seed, cond, k, d):
    rng = np.random.default_rng(seed)
    n, p = 12, 4
    w = rng.uniform(0.2, 2.0, n)
    X = conditioned_design(rng, n, p, cond, w)
    y = rng.standard_normal(n)
    design = WeightedDesign(X, w)
    basis = canonical_basis(design)
    U = basis.eigen.eigenvectors

    ridge = U @ canonical_ridge(basis, design, y, k)
    ref = augmented_lstsq(X, y, w, k)
    assert np.linalg.norm(ridge - ref) <= 1e-6 * np.linalg.norm(ref)

    plugin = rng.standard_normal(p)
    lt = U @ canonical_liu_type(basis, design, y, k, d, U.T @ plugin)
    ref = augmented_lstsq(X, y, w, k, target=-(d / np.sqrt(k)) * plugin)
    assert np.linalg.norm(lt - ref) <= 1e-6 * np.linalg.norm(ref)
