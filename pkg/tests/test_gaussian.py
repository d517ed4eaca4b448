"""Gaussian estimation, density, and spectrum tests."""

import math

import numpy as np
import pytest

from rde.errors import (
    DimensionMismatch,
    InsufficientData,
    NonSymmetric,
    SingularCovariance,
    ValidationError,
)
from rde.gaussian import (
    LOG_2PI,
    GaussianParams,
    differential_entropy,
    fit_mle,
    from_moments,
    log_density,
    mahalanobis_sq,
    mahalanobis_sq_rows,
    spectrum_diagnostics,
)


def random_spd(rng, dim, *, spread=1.0):
    """Random symmetric positive-definite matrix with moderate conditioning."""
    a = rng.normal(size=(dim, dim))
    return a @ a.T + spread * np.eye(dim)


class TestFitMle:
    def test_two_point_hand_case(self):
        params = fit_mle([[0.0, 0.0], [2.0, 0.0]])
        np.testing.assert_array_equal(params.mean, [1.0, 0.0])
        np.testing.assert_array_equal(params.covariance, [[2.0, 0.0], [0.0, 0.0]])
        # the singular second axis forces the jitter ladder past zero
        assert params.jitter > 0.0

    def test_two_point_hand_case_mle_normalization(self):
        params = fit_mle([[0.0, 0.0], [2.0, 0.0]], ddof=0)
        np.testing.assert_array_equal(params.covariance, [[1.0, 0.0], [0.0, 0.0]])

    def test_recovers_generating_moments(self):
        rng = np.random.default_rng(42)
        dim = 10
        true_mean = rng.normal(size=dim)
        true_cov = random_spd(rng, dim)
        chol = np.linalg.cholesky(true_cov)
        samples = true_mean + rng.normal(size=(5000, dim)) @ chol.T
        params = fit_mle(samples)
        assert np.max(np.abs(params.mean - true_mean)) < 0.15
        rel = np.linalg.norm(params.covariance - true_cov) / np.linalg.norm(true_cov)
        assert rel < 0.1

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(size=(40, 4))
        shift = np.array([10.0, -3.0, 0.5, 2.0])
        base = fit_mle(samples)
        moved = fit_mle(samples + shift)
        np.testing.assert_allclose(moved.mean, base.mean + shift, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(moved.covariance, base.covariance, rtol=1e-12, atol=1e-12)

    def test_single_row_rejected(self):
        with pytest.raises(InsufficientData):
            fit_mle([[1.0, 2.0]])

    def test_ragged_rows_rejected(self):
        with pytest.raises(DimensionMismatch):
            fit_mle([[1.0, 2.0], [3.0]])

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            fit_mle([[1.0, np.nan], [0.0, 1.0]])

    def test_bad_ddof_rejected(self):
        with pytest.raises(ValidationError):
            fit_mle(np.eye(3), ddof=2)

    def test_cholesky_reconstructs_jittered_covariance(self):
        rng = np.random.default_rng(11)
        params = fit_mle(rng.normal(size=(60, 5)))
        rebuilt = params.chol_lower @ params.chol_lower.T
        target = params.covariance + params.jitter * np.eye(5)
        err = np.linalg.norm(rebuilt - target) / np.linalg.norm(target)
        assert err < 1e-8
        assert params.log_det == 2.0 * np.sum(np.log(np.diag(params.chol_lower)))

    def test_params_arrays_read_only(self):
        params = fit_mle(np.random.default_rng(0).normal(size=(10, 3)))
        with pytest.raises(ValueError):
            params.mean[0] = 99.0


class TestFromMoments:
    def test_identity_round_trip(self):
        params = from_moments([1.0, 2.0], np.eye(2))
        assert params.jitter == 0.0
        assert params.log_det == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            from_moments([0.0, 0.0], np.eye(3))

    def test_asymmetric_rejected(self):
        with pytest.raises(NonSymmetric):
            from_moments([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_hopelessly_singular_raises(self):
        # a large negative eigenvalue cannot be repaired by the ladder
        with pytest.raises(SingularCovariance):
            from_moments([0.0, 0.0], [[-1.0, 0.0], [0.0, -1.0]])


class TestLogDensity:
    def test_standard_normal_at_origin(self):
        params = from_moments([0.0], [[1.0]])
        assert log_density(params, [0.0]) == pytest.approx(-0.9189385, abs=1e-6)

    def test_at_mean_is_exactly_normalizer(self):
        rng = np.random.default_rng(5)
        params = fit_mle(rng.normal(size=(30, 4)))
        expected = -0.5 * params.dim * LOG_2PI - 0.5 * params.log_det
        assert log_density(params, params.mean) == expected

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(17)
        params = fit_mle(rng.normal(size=(100, 5)))
        z = rng.normal(size=5)
        cov = params.covariance + params.jitter * np.eye(5)
        inv = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        assert sign > 0
        diff = z - params.mean
        direct = -0.5 * 5 * LOG_2PI - 0.5 * logdet - 0.5 * diff @ inv @ diff
        assert log_density(params, z) == pytest.approx(direct, abs=1e-9)

    def test_mode_maximality(self):
        rng = np.random.default_rng(23)
        params = fit_mle(rng.normal(size=(50, 3)))
        at_mean = log_density(params, params.mean)
        for _ in range(50):
            assert log_density(params, rng.normal(size=3)) <= at_mean

    def test_wrong_length_rejected(self):
        params = from_moments([0.0, 0.0], np.eye(2))
        with pytest.raises(DimensionMismatch):
            log_density(params, [1.0, 2.0, 3.0])


class TestMahalanobis:
    def test_euclidean_case(self):
        params = from_moments([0.0, 0.0], np.eye(2))
        assert mahalanobis_sq(params, [3.0, 4.0]) == 25.0

    def test_at_mean_is_zero(self):
        params = from_moments([2.0, -1.0], np.eye(2))
        assert mahalanobis_sq(params, [2.0, -1.0]) == 0.0

    def test_diagonal_scaling(self):
        params = from_moments([0.0, 0.0], [[4.0, 0.0], [0.0, 1.0]])
        assert mahalanobis_sq(params, [2.0, 1.0]) == pytest.approx(2.0, abs=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(31)
        params = fit_mle(rng.normal(size=(40, 4)))
        for _ in range(100):
            assert mahalanobis_sq(params, rng.normal(size=4)) >= 0.0

    def test_chol_matches_dense_inverse(self):
        """Triangular-solve distance vs explicit inverse on conditioned matrices."""
        rng = np.random.default_rng(37)
        for _ in range(10):
            dim = int(rng.integers(2, 8))
            params = from_moments(rng.normal(size=dim), random_spd(rng, dim, spread=0.1))
            cov = params.covariance + params.jitter * np.eye(dim)
            assert np.linalg.cond(cov) <= 1e6
            inv = np.linalg.inv(cov)
            z = rng.normal(size=dim)
            diff = z - params.mean
            assert mahalanobis_sq(params, z) == pytest.approx(diff @ inv @ diff, rel=1e-9, abs=1e-9)

    def test_rows_helper_matches_scalar(self):
        rng = np.random.default_rng(41)
        params = fit_mle(rng.normal(size=(30, 3)))
        X = rng.normal(size=(20, 3))
        batch = mahalanobis_sq_rows(params, X)
        single = [mahalanobis_sq(params, row) for row in X]
        np.testing.assert_allclose(batch, single, rtol=1e-12)


class TestEntropy:
    def test_unit_1d(self):
        params = from_moments([0.0], [[1.0]])
        assert differential_entropy(params) == pytest.approx(1.4189385, abs=1e-6)

    def test_identity_2d(self):
        params = from_moments([0.0, 0.0], np.eye(2))
        assert differential_entropy(params) == pytest.approx(2.8378771, abs=1e-6)

    def test_scaling_shifts_by_half_p_log_c(self):
        rng = np.random.default_rng(7)
        dim = 4
        cov = random_spd(rng, dim)
        c = 3.7
        base = differential_entropy(from_moments(np.zeros(dim), cov))
        scaled = differential_entropy(from_moments(np.zeros(dim), c * cov))
        assert scaled - base == pytest.approx(0.5 * dim * math.log(c), abs=1e-9)

    def test_determinant_identity(self):
        """exp(2(H - (P/2)(log 2pi + 1))) recovers det(cov + jitter I)."""
        rng = np.random.default_rng(13)
        for _ in range(20):
            dim = int(rng.integers(2, 7))
            params = from_moments(rng.normal(size=dim), random_spd(rng, dim))
            h = differential_entropy(params)
            log_det_from_h = 2.0 * (h - 0.5 * dim * (LOG_2PI + 1.0))
            sign, oracle = np.linalg.slogdet(params.covariance + params.jitter * np.eye(dim))
            assert sign > 0
            assert log_det_from_h == pytest.approx(oracle, abs=1e-8)


class TestSpectrum:
    def test_identity(self):
        report = spectrum_diagnostics(np.eye(3))
        assert report.condition_number == pytest.approx(1.0, abs=1e-12)
        assert report.n_near_zero == 0
        np.testing.assert_allclose(report.eigenvalues, [1.0, 1.0, 1.0])

    def test_extreme_diagonal(self):
        report = spectrum_diagnostics(np.diag([1e4, 1e-12]))
        assert report.lambda_max == pytest.approx(1e4, rel=1e-9)
        assert report.lambda_min == pytest.approx(1e-12, rel=1e-6)
        assert report.condition_number == pytest.approx(1e16, rel=1e-6)
        assert report.condition_bound_scale == pytest.approx(1e12, rel=1e-6)
        # 1e-12 is below 1e-12 * lambda_max, so it is flagged
        assert report.n_near_zero == 1

    def test_semidefinite_sentinel(self):
        report = spectrum_diagnostics(np.diag([1.0, 0.0]))
        assert report.condition_number == math.inf
        assert report.condition_bound_scale == math.inf

    def test_sorted_descending(self):
        rng = np.random.default_rng(19)
        report = spectrum_diagnostics(random_spd(rng, 6))
        assert np.all(np.diff(report.eigenvalues) <= 0)
        assert report.lambda_max == report.eigenvalues[0]
        assert report.lambda_min == report.eigenvalues[-1]

    def test_asymmetric_rejected(self):
        with pytest.raises(NonSymmetric):
            spectrum_diagnostics([[1.0, 0.2], [0.0, 1.0]])

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatch):
            spectrum_diagnostics(np.ones((2, 3)))
