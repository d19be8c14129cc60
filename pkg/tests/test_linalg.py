import numpy as np
import pytest

from tvshrink.linalg import (
    NotPositiveDefiniteError,
    apply_inv_sqrt,
    cholesky,
    eig_sym,
    lowrank_inv_sqrt,
    sqrt_sym,
)


class TestEigSym:
    def test_identity(self):
        dec = eig_sym(np.eye(3))
        np.testing.assert_allclose(dec.eigenvalues, np.ones(3))
        np.testing.assert_allclose(dec.eigenvectors.T @ dec.eigenvectors, np.eye(3), atol=1e-12)

    def test_diagonal_descending(self):
        dec = eig_sym(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(dec.eigenvalues, [3.0, 2.0, 1.0])

    def test_recovers_known_factors(self):
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        d = np.sort(rng.uniform(0.5, 4.0, 8))[::-1]
        a = (q * d) @ q.T
        dec = eig_sym(a)
        np.testing.assert_allclose(dec.eigenvalues, d, atol=1e-10)

    def test_reconstruction_and_orthonormality_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = int(rng.integers(2, 41))
            a = rng.standard_normal((p, p))
            a = a + a.T
            dec = eig_sym(a)
            resid = np.linalg.norm(dec.reconstruct() - a, "fro")
            assert resid <= 1e-8 * (1.0 + np.linalg.norm(a, "fro"))
            orth = np.linalg.norm(dec.eigenvectors.T @ dec.eigenvectors - np.eye(p), "fro")
            assert orth <= 1e-10 * p

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            eig_sym(np.array([[1.0, np.nan], [np.nan, 1.0]]))


class TestCholesky:
    def test_identity(self):
        np.testing.assert_allclose(cholesky(np.eye(4)), np.eye(4))

    def test_hand_expanded_2x2(self):
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
        np.testing.assert_allclose(cholesky(a), expected, atol=1e-14)

    def test_residual_random(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            p = int(rng.integers(2, 30))
            b = rng.standard_normal((p, p + 3))
            a = b @ b.T
            ell = cholesky(a)
            assert np.linalg.norm(ell @ ell.T - a, "fro") <= 1e-10 * np.linalg.norm(a, "fro") + 1e-12

    def test_non_pd_reports_pivot(self):
        a = np.diag([1.0, -1e-8, 2.0])
        with pytest.raises(NotPositiveDefiniteError) as err:
            cholesky(a)
        assert err.value.pivot == 2


class TestSqrtSym:
    def test_scaled_identity(self):
        np.testing.assert_allclose(sqrt_sym(4.0 * np.eye(5)), 2.0 * np.eye(5), atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(sqrt_sym(np.diag([9.0, 4.0])), np.diag([3.0, 2.0]), atol=1e-12)

    def test_square_reconstructs(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((12, 12))
        a = b @ b.T
        root = sqrt_sym(a)
        assert np.linalg.norm(root @ root - a, "fro") <= 1e-8 * (1.0 + np.linalg.norm(a, "fro"))

    def test_tiny_negative_clamped(self):
        a = np.diag([1.0, -1e-14])
        root = sqrt_sym(a)
        np.testing.assert_allclose(root, np.diag([1.0, 0.0]), atol=1e-12)

    def test_material_negative_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            sqrt_sym(np.diag([1.0, -0.5]))

    def test_agrees_with_cholesky_reconstruction(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((9, 9))
        a = b @ b.T
        ell = cholesky(a)
        np.testing.assert_allclose(sqrt_sym(ell @ ell.T), sqrt_sym(a), atol=1e-9)


class TestLowRankInvSqrt:
    def test_zero_factor_is_pure_scale(self):
        f = lowrank_inv_sqrt(0.25, np.zeros((6, 2)))
        assert f.rank == 0
        np.testing.assert_allclose(f.base_scale, 2.0)
        x = np.arange(6.0)
        np.testing.assert_allclose(apply_inv_sqrt(f, x), 2.0 * x)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        p, m, c = 6, 2, 0.3
        b = rng.standard_normal((p, m))
        f = lowrank_inv_sqrt(c, b)
        dense = np.linalg.inv(sqrt_sym(c * np.eye(p) + b @ b.T))
        np.testing.assert_allclose(f.dense(), dense, atol=1e-10)

    def test_duplicated_column_drops_direction(self):
        rng = np.random.default_rng(6)
        col = rng.standard_normal(7)
        b = np.column_stack([col, col])
        f = lowrank_inv_sqrt(0.5, b)
        assert f.rank == 1
        dense = np.linalg.inv(sqrt_sym(0.5 * np.eye(7) + b @ b.T))
        np.testing.assert_allclose(f.dense(), dense, atol=1e-10)

    def test_apply_matches_dense_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = int(rng.integers(3, 51))
            m = int(rng.integers(1, min(11, p)))
            c = float(rng.uniform(0.05, 2.0))
            b = rng.standard_normal((p, m))
            x = rng.standard_normal(p)
            f = lowrank_inv_sqrt(c, b)
            dense = np.linalg.inv(sqrt_sym(c * np.eye(p) + b @ b.T))
            rel = np.linalg.norm(f.dense() - dense, "fro") / np.linalg.norm(dense, "fro")
            assert rel <= 1e-9
            np.testing.assert_allclose(apply_inv_sqrt(f, x), dense @ x, atol=1e-10 * (1 + np.abs(dense @ x).max()))

    def test_zero_vector_maps_to_zero(self):
        f = lowrank_inv_sqrt(1.0, np.random.default_rng(8).standard_normal((5, 2)))
        np.testing.assert_allclose(apply_inv_sqrt(f, np.zeros(5)), np.zeros(5))

    def test_coeffs_nonpositive_and_spd(self):
        rng = np.random.default_rng(9)
        f = lowrank_inv_sqrt(0.7, rng.standard_normal((10, 3)))
        assert np.all(f.coeffs <= 0)
        assert np.all(np.linalg.eigvalsh(f.dense()) > 0)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            lowrank_inv_sqrt(0.0, np.zeros((4, 1)))
