"""Binning/postselection recovery of conditional statistics."""

import numpy as np
import pytest

from boselat.errors import InsufficientDataError
from boselat.filters import FilterKernel, analytic_filter_single
from boselat.gaussian import GaussianState1, SingleSiteParams
from boselat.lattice import GaussianLatticeState
from boselat.postselect import (
    TrajectoryOutcome,
    bin2d_and_recover_covariance,
    bin_and_recover_variance,
    compute_estimators,
    recover_covariance_profile,
    sample_measurement,
    spatial_average_correlators,
)
from boselat.records import MeasurementRecord, SeedSpec, TimeGrid


def _synthetic_outcomes(rng, n, est_sigma, cond_var, cross=0.0):
    """Gaussian toy model: measured = conditional mean + conditional noise."""
    mean_1 = rng.normal(0.0, est_sigma, size=n)
    mean_2 = rng.normal(0.0, est_sigma, size=n)
    cov = np.array([[cond_var, cross], [cross, cond_var]])
    chol = np.linalg.cholesky(cov)
    noise = rng.standard_normal((n, 2)) @ chol.T
    outcomes = []
    for i in range(n):
        est = np.array([mean_1[i], mean_2[i]])
        meas = est + noise[i]
        outcomes.append(TrajectoryOutcome(i, est, meas, 10.0))
    return outcomes


class TestTrajectoryOutcome:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            TrajectoryOutcome(0, np.zeros(2), np.zeros(3), 1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TrajectoryOutcome(0, np.array([np.nan]), np.array([0.0]), 1.0)


class TestSampleMeasurement:
    def test_single_site_statistics(self):
        state = GaussianState1(mean_x=1.5, mean_p=-0.5, v_x=0.5, v_p=0.7, u=0.2)
        draws = np.array(
            [sample_measurement(state, "x", SeedSpec(0, i))[0] for i in range(4000)]
        )
        assert draws.mean() == pytest.approx(1.5, abs=4 * np.sqrt(0.5 / 4000) + 0.01)
        assert draws.var() == pytest.approx(0.5, rel=0.1)

    def test_deterministic_per_seed(self):
        state = GaussianState1(mean_x=0.0, mean_p=0.0, v_x=0.5, v_p=0.5, u=0.0)
        a = sample_measurement(state, "p", SeedSpec(3, 7))
        b = sample_measurement(state, "p", SeedSpec(3, 7))
        np.testing.assert_array_equal(a, b)

    def test_lattice_joint_covariance(self):
        cov = np.array([[0.5, 0.2], [0.2, 0.5]])
        state = GaussianLatticeState(
            X=np.zeros(2), P=np.zeros(2), CX=cov, CP=np.eye(2), U=np.zeros((2, 2))
        )
        draws = np.array(
            [sample_measurement(state, "x", SeedSpec(1, i)) for i in range(6000)]
        )
        emp = np.cov(draws.T)
        np.testing.assert_allclose(emp, cov, atol=0.05)

    def test_invalid_quadrature(self):
        state = GaussianState1(mean_x=0, mean_p=0, v_x=0.5, v_p=0.5, u=0.0)
        with pytest.raises(ValueError):
            sample_measurement(state, "z", SeedSpec(0))


class TestComputeEstimators:
    def test_applies_global_prefactor(self):
        from boselat.records import convolve_record

        gamma = 0.7
        params = SingleSiteParams(h0=1.0, gamma=gamma)
        kernel = analytic_filter_single(params, dt=0.01, t_max=1.0)
        grid = TimeGrid(dt=0.01, n_steps=200)
        rng = np.random.default_rng(0)
        record = MeasurementRecord(grid=grid, increments=rng.normal(size=(1, 200)))
        est = compute_estimators(record, kernel, [0], t_obs=1.99)
        raw = convolve_record(record, kernel, 0, 1.99)
        assert est[0] == pytest.approx(2.0 * np.sqrt(gamma) * raw, abs=1e-12)


class TestVarianceRecovery:
    def test_many_bins_recover_conditional_variance(self):
        rng = np.random.default_rng(42)
        outcomes = _synthetic_outcomes(rng, 60000, est_sigma=2.2, cond_var=0.4)
        rec = bin_and_recover_variance(outcomes, 0, 80)
        # residual positive bias ~ (bin width)^2 / 12
        width = 8.0 * 2.2 / 80
        assert rec.pooled_variance == pytest.approx(0.4 + width**2 / 12.0, rel=0.05)

    def test_single_bin_gives_total_variance(self):
        rng = np.random.default_rng(1)
        outcomes = _synthetic_outcomes(rng, 30000, est_sigma=2.0, cond_var=0.5)
        rec = bin_and_recover_variance(outcomes, 0, 1)
        total = 2.0**2 + 0.5
        assert rec.pooled_variance == pytest.approx(total, rel=0.05)

    def test_binning_bias_decreases_with_bin_count(self):
        rng = np.random.default_rng(2)
        outcomes = _synthetic_outcomes(rng, 60000, est_sigma=2.0, cond_var=0.3)
        coarse = bin_and_recover_variance(outcomes, 0, 5).pooled_variance
        fine = bin_and_recover_variance(outcomes, 0, 60).pooled_variance
        assert fine < coarse
        assert abs(fine - 0.3) < abs(coarse - 0.3)

    def test_sparse_bins_excluded(self):
        rng = np.random.default_rng(3)
        outcomes = _synthetic_outcomes(rng, 300, est_sigma=1.0, cond_var=0.2)
        rec = bin_and_recover_variance(outcomes, 0, 20)
        assert np.any(rec.stats.counts < 10)
        assert np.all(np.isnan(rec.per_bin_variance[rec.stats.counts < 10]))
        assert 0.0 < rec.stats.excluded_fraction < 1.0

    def test_all_bins_sparse_raises(self):
        rng = np.random.default_rng(4)
        outcomes = _synthetic_outcomes(rng, 30, est_sigma=1.0, cond_var=0.2)
        with pytest.raises(InsufficientDataError):
            bin_and_recover_variance(outcomes, 0, 400)

    def test_standard_error_is_calibrated(self):
        # repeated recoveries should scatter on the scale of the reported SE
        devs, ses = [], []
        for trial in range(20):
            rng = np.random.default_rng(100 + trial)
            outcomes = _synthetic_outcomes(rng, 8000, est_sigma=2.0, cond_var=0.4)
            rec = bin_and_recover_variance(outcomes, 0, 30)
            width = 8.0 * 2.0 / 30
            devs.append(rec.pooled_variance - (0.4 + width**2 / 12.0))
            ses.append(rec.standard_error)
        ratio = np.std(devs) / np.mean(ses)
        assert 0.5 < ratio < 2.0


class TestCovarianceRecovery:
    def test_recovers_cross_covariance(self):
        rng = np.random.default_rng(5)
        outcomes = _synthetic_outcomes(rng, 60000, est_sigma=2.0, cond_var=0.4, cross=0.15)
        rec = bin2d_and_recover_covariance(outcomes, (0, 1), 15)
        assert rec.pooled_covariance == pytest.approx(0.15, abs=3 * rec.standard_error + 0.01)

    def test_diagonal_pair_matches_variance_recovery(self):
        rng = np.random.default_rng(6)
        outcomes = _synthetic_outcomes(rng, 20000, est_sigma=2.0, cond_var=0.4)
        var_rec = bin_and_recover_variance(outcomes, 0, 20)
        cov_rec = bin2d_and_recover_covariance(outcomes, (0, 0), 20)
        assert cov_rec.pooled_covariance == pytest.approx(var_rec.pooled_variance, abs=1e-14)

    def test_profile_helper_aligns_with_pairwise_calls(self):
        rng = np.random.default_rng(7)
        outcomes = _synthetic_outcomes(rng, 20000, est_sigma=2.0, cond_var=0.4, cross=0.1)
        vals, errs = recover_covariance_profile(outcomes, [0, 1], 15)
        direct0 = bin2d_and_recover_covariance(outcomes, (0, 0), 15)
        direct1 = bin2d_and_recover_covariance(outcomes, (0, 1), 15)
        assert vals[0] == pytest.approx(direct0.pooled_covariance, abs=1e-14)
        assert vals[1] == pytest.approx(direct1.pooled_covariance, abs=1e-14)
        assert errs.shape == (2,)


class TestSpatialAveraging:
    def test_requires_enough_windows(self):
        grid = TimeGrid(dt=0.1, n_steps=100)
        record = MeasurementRecord(grid=grid, increments=np.zeros((16, 100)))
        with pytest.raises(InsufficientDataError):
            spatial_average_correlators(record, np.zeros(16), window_spacing=4, max_lag=1.0)

    def test_white_record_has_flat_correlator(self):
        rng = np.random.default_rng(8)
        grid = TimeGrid(dt=0.1, n_steps=400)
        inc = rng.normal(0.0, np.sqrt(grid.dt), size=(32, 400))
        record = MeasurementRecord(grid=grid, increments=inc)
        tables = spatial_average_correlators(
            record, rng.normal(size=32), window_spacing=2, max_lag=2.0
        )
        assert tables.delta_weight == pytest.approx(10.0)
        # pure noise: stationary part is zero within sampling error
        assert np.abs(tables.S[1:]).max() < 1.0
