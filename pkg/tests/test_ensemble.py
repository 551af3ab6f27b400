"""Batched ensembles: seeding contracts, online estimators, statistics."""

import numpy as np
import pytest

from conftest import VX_STEADY
from boselat.ensemble import (
    lattice_kernel_symbols,
    run_fock_ensemble,
    run_lattice_ensemble,
    run_single_site_ensemble,
    seed_plan,
    symbols_from_kernel,
)
from boselat.filters import analytic_filter_single, analytic_kernels_lattice
from boselat.fock import integrate_sse_pure, number_state
from boselat.gaussian import (
    SingleSiteParams,
    simulate_trajectory_single,
    unconditional_variance_single,
    vacuum_state,
)
from boselat.lattice import LatticeParams, simulate_trajectory_lattice, vacuum_lattice_state
from boselat.postselect import compute_estimators
from boselat.records import SeedSpec, TimeGrid, generate_wiener

PARAMS = SingleSiteParams(h0=1.0, gamma=1.0)


class TestSeedPlan:
    def test_distinct_and_deterministic(self):
        plan = seed_plan(3, 5)
        assert len(plan) == 5
        assert len({(s.master_seed, s.trajectory_index) for s in plan}) == 5
        assert plan == seed_plan(3, 5)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            seed_plan(0, 0)


class TestSingleSiteEnsemble:
    def test_chunking_does_not_change_results(self):
        grid = TimeGrid(dt=1e-3, n_steps=300)
        kernel = analytic_filter_single(PARAMS, dt=grid.dt)
        a = run_single_site_ensemble(
            PARAMS, grid, 23, 9, kernel=kernel, sample_quadrature="x", chunk_size=7
        )
        b = run_single_site_ensemble(
            PARAMS, grid, 23, 9, kernel=kernel, sample_quadrature="x", chunk_size=2000
        )
        np.testing.assert_array_equal(a.mean_x, b.mean_x)
        np.testing.assert_array_equal(a.estimators, b.estimators)
        np.testing.assert_array_equal(a.measured, b.measured)

    def test_matches_per_trajectory_simulation(self):
        grid = TimeGrid(dt=1e-3, n_steps=400)
        kernel = analytic_filter_single(PARAMS, dt=grid.dt)
        ens = run_single_site_ensemble(PARAMS, grid, 3, 17, kernel=kernel)
        for i in range(3):
            traj = simulate_trajectory_single(PARAMS, vacuum_state(), grid, SeedSpec(17, i))
            assert ens.mean_x[i] == pytest.approx(traj.mean_x[-1], abs=1e-10)
            assert ens.mean_p[i] == pytest.approx(traj.mean_p[-1], abs=1e-10)
            est = compute_estimators(traj.record, kernel, [0], t_obs=grid.t_final - grid.dt)
            assert ens.estimators[i] == pytest.approx(est[0], abs=1e-10)

    def test_unconditional_variance_reproduced(self):
        grid = TimeGrid(dt=1e-3, n_steps=3000)
        ens = run_single_site_ensemble(PARAMS, grid, 3000, 1)
        total = np.mean(ens.mean_x**2) + ens.v_x
        ref = unconditional_variance_single(3.0, PARAMS)
        se = np.std(ens.mean_x**2) / np.sqrt(3000)
        assert abs(total - ref) < 4 * se
        assert abs(ens.mean_x.mean()) < 4 * np.sqrt(ref / 3000)

    def test_estimator_tracks_conditional_mean(self):
        grid = TimeGrid(dt=1e-3, n_steps=10000)
        kernel = analytic_filter_single(PARAMS, dt=grid.dt)
        ens = run_single_site_ensemble(PARAMS, grid, 200, 2, kernel=kernel)
        err = np.sqrt(np.mean((ens.estimators - ens.mean_x) ** 2))
        assert err < 0.05 * ens.mean_x.std()

    def test_measured_samples_have_total_variance(self):
        grid = TimeGrid(dt=1e-3, n_steps=3000)
        ens = run_single_site_ensemble(PARAMS, grid, 4000, 5, sample_quadrature="x")
        ref = unconditional_variance_single(3.0, PARAMS)
        assert np.var(ens.measured) == pytest.approx(ref, rel=0.1)


class TestFockEnsemble:
    def test_matches_per_trajectory_integration(self):
        grid = TimeGrid(dt=1e-3, n_steps=300)
        ens = run_fock_ensemble(
            PARAMS, number_state(0, 24), grid, 2, 11, sample_quadrature=None
        )
        for i in range(2):
            dw = generate_wiener(grid, 1, SeedSpec(11, i))[0]
            state, _, mean_x = integrate_sse_pure(number_state(0, 24), PARAMS, dw, grid.dt)
            # ensemble stores <x> of the final state, one step past mean_x[-1]
            assert ens.mean_x[i] == pytest.approx(
                float(
                    np.real(
                        state.amps.conj()
                        @ (np.diag(np.sqrt(np.arange(1, 24)), 1) + np.diag(np.sqrt(np.arange(1, 24)), -1))
                        @ state.amps
                    )
                )
                / np.sqrt(2.0),
                abs=1e-9,
            )

    def test_estimator_tracks_gaussian_conditional_mean(self):
        # vacuum stays Gaussian, so the Fock engine must agree with the
        # Gaussian engine driven by the same Wiener paths
        grid = TimeGrid(dt=1e-3, n_steps=2000)
        kernel = analytic_filter_single(PARAMS, dt=grid.dt)
        fock = run_fock_ensemble(PARAMS, number_state(0, 32), grid, 50, 7, kernel=kernel)
        gauss = run_single_site_ensemble(PARAMS, grid, 50, 7, kernel=kernel)
        # both integrators carry O(dt) strong error, so agreement is loose
        np.testing.assert_allclose(fock.mean_x, gauss.mean_x, atol=5e-2)
        np.testing.assert_allclose(fock.estimators, gauss.estimators, atol=5e-2)

    def test_projective_samples_match_gaussian_statistics(self):
        grid = TimeGrid(dt=1e-3, n_steps=1000)
        ens = run_fock_ensemble(PARAMS, number_state(0, 32), grid, 2000, 3)
        ref = unconditional_variance_single(1.0, PARAMS)
        assert np.var(ens.measured) == pytest.approx(ref, rel=0.15)


class TestLatticeSymbols:
    def test_symbols_match_explicit_kernel_transform(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(16,))
        dt, n = 1e-2, 40
        k_x, k_p = analytic_kernels_lattice(params, dt=dt, t_max=(n - 1) * dt)
        sym_direct = lattice_kernel_symbols(params, n, dt, target="p")
        sym_fft = symbols_from_kernel(k_p, 16, n)
        np.testing.assert_allclose(np.real(sym_fft), sym_direct, atol=1e-10)
        np.testing.assert_allclose(np.imag(sym_fft), 0.0, atol=1e-10)

    def test_x_symbols_start_at_steady_profile(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        sym = lattice_kernel_symbols(params, 5, 1e-2, target="x")
        from boselat.lattice import steady_state_lattice

        np.testing.assert_allclose(sym[0], steady_state_lattice(params).v_q.ravel())

    def test_p_symbols_start_at_steady_cross_covariance(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        sym = lattice_kernel_symbols(params, 5, 1e-2, target="p")
        from boselat.lattice import steady_state_lattice

        np.testing.assert_allclose(sym[0], steady_state_lattice(params).u_q.ravel())


class TestLatticeEnsemble:
    def test_chunking_does_not_change_results(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        grid = TimeGrid(dt=1e-3, n_steps=200)
        sym = {"p": lattice_kernel_symbols(params, 200, grid.dt, target="p")}
        a = run_lattice_ensemble(params, grid, 9, 4, kernel_symbols=sym, chunk_size=2)
        b = run_lattice_ensemble(params, grid, 9, 4, kernel_symbols=sym, chunk_size=100)
        # batched FFT/matmul reduction order varies with chunk shape, so
        # agreement is to rounding, not bitwise
        np.testing.assert_allclose(a.X, b.X, atol=1e-12)
        np.testing.assert_allclose(a.estimators["p"], b.estimators["p"], atol=1e-12)
        np.testing.assert_allclose(a.measured, b.measured, atol=1e-12)

    def test_matches_direct_lattice_simulation(self):
        # 250 steps aligns the blockwise noise draws with generate_wiener
        params = LatticeParams(j0=3.0, j=1.0, lengths=(4,))
        grid = TimeGrid(dt=1e-3, n_steps=250)
        ens = run_lattice_ensemble(params, grid, 2, 13, sample_quadrature=None)
        for i in range(2):
            traj = simulate_trajectory_lattice(
                params, vacuum_lattice_state(4), grid, SeedSpec(13, i)
            )
            np.testing.assert_allclose(ens.X[i], traj.X[-1], atol=1e-8)
            np.testing.assert_allclose(ens.P[i], traj.P[-1], atol=1e-8)

    def test_estimator_matches_record_convolution(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(4,))
        grid = TimeGrid(dt=1e-3, n_steps=250)
        n = grid.n_steps
        _, k_p = analytic_kernels_lattice(params, dt=grid.dt, t_max=(n - 1) * grid.dt)
        sym = {"p": lattice_kernel_symbols(params, n, grid.dt, target="p")}
        ens = run_lattice_ensemble(
            params, grid, 1, 19, kernel_symbols=sym, sample_quadrature=None
        )
        traj = simulate_trajectory_lattice(
            params, vacuum_lattice_state(4), grid, SeedSpec(19, 0)
        )
        est = compute_estimators(
            traj.record, k_p, [0, 1, 2, 3], t_obs=grid.t_final - grid.dt
        )
        np.testing.assert_allclose(ens.estimators["p"][0], est, atol=1e-8)

    def test_zero_hopping_reduces_to_single_site(self):
        params = LatticeParams(j0=1.0, j=0.0, lengths=(3,))
        grid = TimeGrid(dt=1e-3, n_steps=500)
        ens = run_lattice_ensemble(params, grid, 4, 2, sample_quadrature=None)
        _, final_cx, _ = ens.cov_profiles[0], ens.cov_profiles[0], None
        # final covariance profile is on-site only and matches the single copy
        c_x = ens.cov_profiles[0]
        from boselat.gaussian import integrate_covariances

        ref = integrate_covariances(PARAMS, (0.5, 0.5, 0.0), 0.5, 1e-3)
        assert c_x[0] == pytest.approx(ref[0], abs=1e-10)
        np.testing.assert_allclose(c_x[1:], 0.0, atol=1e-12)

    def test_estimator_tracks_conditional_means(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(16,))
        grid = TimeGrid(dt=1e-3, n_steps=8000)
        sym = {
            "x": lattice_kernel_symbols(params, grid.n_steps, grid.dt, target="x"),
            "p": lattice_kernel_symbols(params, grid.n_steps, grid.dt, target="p"),
        }
        ens = run_lattice_ensemble(
            params, grid, 40, 6, kernel_symbols=sym, sample_quadrature=None
        )
        for target, truth in (("x", ens.X), ("p", ens.P)):
            err = np.sqrt(np.mean((ens.estimators[target] - truth) ** 2))
            assert err < 0.05 * truth.std()
