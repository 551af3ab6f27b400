"""Lattice Gaussian dynamics and momentum-space closed forms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import U_STEADY, VP_STEADY, VX_STEADY
from boselat.errors import GaplessParametersError
from boselat.gaussian import SingleSiteParams, steady_state_single
from boselat.lattice import (
    GaussianLatticeState,
    LatticeParams,
    circulant_from_profile,
    correlation_length,
    correlator_profile,
    covariance_matrices_from_momentum,
    dispersion,
    dispersion_grid,
    hamiltonian_matrix,
    integrate_covariances_momentum,
    momentum_grid,
    simulate_trajectory_lattice,
    steady_covariances_at,
    steady_state_lattice,
    vacuum_lattice_state,
)
from boselat.records import SeedSpec, TimeGrid


class TestDispersion:
    def test_band_edges_1d(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        assert dispersion(np.array([0.0]), params) == pytest.approx(1.0)
        assert dispersion(np.array([np.pi]), params) == pytest.approx(5.0)

    def test_gap_2d(self):
        params = LatticeParams(j0=5.0, j=1.0, lengths=(4, 4))
        assert params.gap == pytest.approx(1.0)
        h = dispersion_grid(params)
        assert h.shape == (4, 4)
        assert h.min() == pytest.approx(1.0)

    def test_correlation_length_values(self):
        assert correlation_length(
            LatticeParams(j0=2.0025, j=1.0, lengths=(8,))
        ) == pytest.approx(20.0, abs=1e-12)
        assert correlation_length(
            LatticeParams(j0=2.0005, j=1.0, lengths=(8,))
        ) == pytest.approx(np.sqrt(2000.0), abs=1e-9)

    def test_gapless_rejected(self):
        with pytest.raises(GaplessParametersError):
            correlation_length(LatticeParams(j0=2.0, j=1.0, lengths=(8,)))
        with pytest.raises(GaplessParametersError):
            steady_state_lattice(LatticeParams(j0=1.0, j=1.0, lengths=(8,)))

    def test_momentum_grid_covers_brillouin_zone(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(4,))
        q = momentum_grid(params)
        np.testing.assert_allclose(q[:, 0], [0.0, np.pi / 2, np.pi, 3 * np.pi / 2])


class TestSteadyState:
    def test_purity_per_momentum(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(16,))
        ss = steady_state_lattice(params)
        np.testing.assert_allclose(
            ss.v_q * ss.w_q - ss.u_q**2, 0.25, atol=1e-12
        )

    @settings(max_examples=30, deadline=None)
    @given(h_q=st.floats(1e-4, 1e4), gamma=st.floats(1e-3, 1e3))
    def test_purity_any_momentum_parameters(self, h_q, gamma):
        v, u, w = steady_covariances_at(np.array([h_q]), gamma)
        assert v[0] * w[0] - u[0] ** 2 == pytest.approx(0.25, rel=1e-10)

    def test_reduces_to_single_site_at_zero_hopping(self):
        params = LatticeParams(j0=1.0, j=0.0, lengths=(6,))
        ss = steady_state_lattice(params)
        np.testing.assert_allclose(ss.v_q, VX_STEADY, atol=1e-12)
        np.testing.assert_allclose(ss.w_q, VP_STEADY, atol=1e-12)
        np.testing.assert_allclose(ss.u_q, U_STEADY, atol=1e-12)

    def test_momentum_copies_match_single_site_formula(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        ss = steady_state_lattice(params)
        for hq, vq, uq, wq in zip(
            ss.h_q.ravel(), ss.v_q.ravel(), ss.u_q.ravel(), ss.w_q.ravel()
        ):
            single = steady_state_single(SingleSiteParams(h0=float(hq), gamma=1.0))
            assert vq == pytest.approx(single.v_x, abs=1e-12)
            assert wq == pytest.approx(single.v_p, abs=1e-12)
            assert uq == pytest.approx(single.u, abs=1e-12)


class TestCorrelatorProfile:
    def test_zero_hopping_profile_is_on_site_only(self):
        params = LatticeParams(j0=1.0, j=0.0, lengths=(8,))
        c_x, c_p = correlator_profile(params)
        assert c_x[0] == pytest.approx(VX_STEADY, abs=1e-12)
        assert c_p[0] == pytest.approx(VP_STEADY, abs=1e-12)
        np.testing.assert_allclose(c_x[1:], 0.0, atol=1e-12)

    def test_profile_decays_with_separation(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(64,))
        c_x, c_p = correlator_profile(params)
        assert abs(c_p[5]) < abs(c_p[0])
        assert abs(c_p[20]) < 1e-6 * abs(c_p[0])

    def test_profile_even_in_separation(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(16,))
        c_x, c_p = correlator_profile(params)
        np.testing.assert_allclose(c_x[1:], c_x[1:][::-1], atol=1e-14)
        np.testing.assert_allclose(c_p[1:], c_p[1:][::-1], atol=1e-14)


class TestHamiltonianMatrix:
    def test_spectrum_equals_dispersion(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        h = hamiltonian_matrix(params)
        np.testing.assert_allclose(h, h.T, atol=1e-14)
        evals = np.sort(np.linalg.eigvalsh(h))
        ref = np.sort(dispersion_grid(params).ravel())
        np.testing.assert_allclose(evals, ref, atol=1e-10)

    def test_spectrum_equals_dispersion_2d(self):
        params = LatticeParams(j0=5.0, j=1.0, lengths=(4, 3))
        h = hamiltonian_matrix(params)
        evals = np.sort(np.linalg.eigvalsh(h))
        ref = np.sort(dispersion_grid(params).ravel())
        np.testing.assert_allclose(evals, ref, atol=1e-10)


class TestMomentumDecoupling:
    def test_direct_flow_matches_per_momentum_reconstruction(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        grid = TimeGrid(dt=1e-3, n_steps=400)
        traj = simulate_trajectory_lattice(
            params,
            vacuum_lattice_state(8),
            grid,
            SeedSpec(0),
            snapshot_times=(0.2, 0.4),
        )
        for t, (CX, CP, U) in traj.cov_snapshots.items():
            _, final, _ = integrate_covariances_momentum(params, t, grid.dt)
            CX_q, CP_q, U_q = covariance_matrices_from_momentum(
                (final[0], final[1], final[2]), params.lengths
            )
            np.testing.assert_allclose(CX, CX_q, atol=1e-8)
            np.testing.assert_allclose(CP, CP_q, atol=1e-8)
            np.testing.assert_allclose(U, U_q, atol=1e-8)

    def test_covariances_stay_translation_invariant(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(6,))
        grid = TimeGrid(dt=1e-3, n_steps=200)
        traj = simulate_trajectory_lattice(
            params, vacuum_lattice_state(6), grid, SeedSpec(1), snapshot_times=(0.2,)
        )
        CX = traj.cov_snapshots[0.2][0]
        rolled = np.roll(np.roll(CX, 1, axis=0), 1, axis=1)
        np.testing.assert_allclose(CX, rolled, atol=1e-10)

    def test_long_time_flow_reaches_momentum_steady_state(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(8,))
        _, final, _ = integrate_covariances_momentum(params, 20.0, 1e-3)
        ss = steady_state_lattice(params)
        np.testing.assert_allclose(final[0], ss.v_q.ravel(), atol=1e-8)
        np.testing.assert_allclose(final[1], ss.w_q.ravel(), atol=1e-8)
        np.testing.assert_allclose(final[2], ss.u_q.ravel(), atol=1e-8)


class TestTrajectory:
    def test_deterministic_and_record_shape(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(4,))
        grid = TimeGrid(dt=1e-3, n_steps=100)
        t1 = simulate_trajectory_lattice(params, vacuum_lattice_state(4), grid, SeedSpec(9))
        t2 = simulate_trajectory_lattice(params, vacuum_lattice_state(4), grid, SeedSpec(9))
        np.testing.assert_array_equal(t1.X, t2.X)
        assert t1.record.increments.shape == (4, 100)

    def test_tracked_entries_follow_snapshots(self):
        params = LatticeParams(j0=3.0, j=1.0, lengths=(4,))
        grid = TimeGrid(dt=1e-3, n_steps=100)
        traj = simulate_trajectory_lattice(
            params,
            vacuum_lattice_state(4),
            grid,
            SeedSpec(2),
            track=(("CP", 0, 0), ("CP", 0, 1)),
            snapshot_times=(0.1,),
        )
        CP = traj.cov_snapshots[0.1][1]
        assert traj.tracked[("CP", 0, 0)][-1] == pytest.approx(CP[0, 0], abs=1e-14)
        assert traj.tracked[("CP", 0, 1)][-1] == pytest.approx(CP[0, 1], abs=1e-14)


class TestCirculant:
    def test_circulant_from_profile_1d(self):
        prof = np.array([1.0, 2.0, 3.0, 4.0])
        m = circulant_from_profile(prof, (4,))
        np.testing.assert_allclose(m[:, 0], prof)
        np.testing.assert_allclose(np.diag(m), 1.0)
        assert m[1, 0] == pytest.approx(2.0)
        assert m[0, 1] == pytest.approx(4.0)
