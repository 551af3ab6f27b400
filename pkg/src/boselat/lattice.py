"""Lattice Gaussian dynamics: matrix Riccati flow, record-driven means,
and momentum-space closed forms.

Bosons hop on a periodic lattice with Hamiltonian matrix
``h = J0 I - J sum_mu (shift_mu + shift_mu^-1)`` while every site's x
quadrature is monitored at rate gamma.  The conditional covariance blocks
(C^X, C^P, U) obey a matrix version of the single-site Riccati system and
the means are driven by the per-site record increments.

With periodic boundaries every momentum decouples into a copy of the
single-site model with ``h0 -> h_q = J0 - 2 J sum_mu cos(q_mu)``, which
gives closed-form steady-state covariances per momentum and, by inverse
Fourier transform (with 1/V normalization), the real-space correlator
profiles.  The gap condition ``h_q > 0`` everywhere (J0 > 2 d J for J > 0)
is required for the steady state to exist; the associated correlation
length is ``xi = sqrt(J / (J0 - 2 d J))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import GaplessParametersError, InstabilityError, UnsupportedParameterError
from .gaussian import _riccati_rk4, steady_state_single, SingleSiteParams
from .records import MeasurementRecord, SeedSpec, TimeGrid, generate_wiener


@dataclass(frozen=True)
class LatticeParams:
    """Hopping J, on-site energy J0, dimension d, per-dimension lengths."""

    j0: float
    j: float
    lengths: tuple[int, ...]
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        if any(n < 1 for n in self.lengths):
            raise UnsupportedParameterError("all lattice lengths must be >= 1")
        if not self.gamma > 0:
            raise UnsupportedParameterError(f"gamma must be > 0, got {self.gamma}")

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def sites(self) -> int:
        return int(np.prod(self.lengths))

    @property
    def gap(self) -> float:
        """Minimum of the dispersion in the continuum limit, J0 - 2 d J."""
        return self.j0 - 2.0 * self.d * self.j


def dispersion(q, params: LatticeParams) -> np.ndarray:
    """h_q = J0 - 2 J sum_mu cos(q_mu) for q of shape (d,) or (N, d)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    hq = params.j0 - 2.0 * params.j * np.cos(q).sum(axis=1)
    return hq if hq.size > 1 else float(hq[0])


def correlation_length(params: LatticeParams) -> float:
    """xi = sqrt(J / (J0 - 2 d J)); requires the gapped regime."""
    if not params.gap > 0:
        raise GaplessParametersError(
            f"gapless parameters: J0 - 2 d J = {params.gap} <= 0"
        )
    return float(np.sqrt(params.j / params.gap))


def momentum_grid(params: LatticeParams) -> np.ndarray:
    """All lattice momenta, shape (V, d), q_mu = 2 pi k / L_mu."""
    axes = [2.0 * np.pi * np.arange(n) / n for n in params.lengths]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def dispersion_grid(params: LatticeParams) -> np.ndarray:
    """h_q on the full momentum grid, shape ``params.lengths``."""
    return np.asarray(dispersion(momentum_grid(params), params)).reshape(
        params.lengths
    )


class SteadyCovariances(NamedTuple):
    """Per-momentum steady covariances (v_q, u_q, w_q) on the full grid.

    Arrays have shape ``lengths``; the pure steady state satisfies
    v_q w_q - u_q^2 = 1/4 at every momentum.
    """

    q: np.ndarray
    h_q: np.ndarray
    v_q: np.ndarray
    u_q: np.ndarray
    w_q: np.ndarray


def steady_covariances_at(h_q, gamma: float):
    """Single-site steady-state closed forms evaluated elementwise at h_q."""
    h_q = np.asarray(h_q, dtype=float)
    if np.any(h_q <= 0):
        raise GaplessParametersError("h_q <= 0 somewhere on the momentum grid")
    a = h_q / (4.0 * gamma)
    root = np.sqrt(a * a + 0.25)
    denom = a + root
    v = np.sqrt(h_q / (8.0 * gamma)) / np.sqrt(denom)
    w = np.sqrt(2.0 * gamma / h_q) * root / np.sqrt(denom)
    u = 0.25 / denom
    return v, u, w


def steady_state_lattice(params: LatticeParams) -> SteadyCovariances:
    q = momentum_grid(params)
    h_q = np.asarray(dispersion(q, params), dtype=float).reshape(params.lengths)
    v, u, w = steady_covariances_at(h_q, params.gamma)
    return SteadyCovariances(q=q, h_q=h_q, v_q=v, u_q=u, w_q=w)


def correlator_profile(params: LatticeParams):
    """Real-space steady-state profiles (C^X_r, C^P_r).

    Inverse discrete Fourier transform of (v_q, w_q) with 1/V
    normalization, so the J = 0 limit reduces to the single-site values at
    r = 0.  Returns arrays of shape ``lengths`` indexed by separation.
    """
    ss = steady_state_lattice(params)
    c_x = np.real(np.fft.ifftn(ss.v_q))
    c_p = np.real(np.fft.ifftn(ss.w_q))
    return c_x, c_p


def hamiltonian_matrix(params: LatticeParams) -> np.ndarray:
    """Dense V x V single-particle Hamiltonian with periodic boundaries.

    Each neighbor pair contributes -J twice (once per hopping direction),
    so h_ij = J0 delta_ij - J (delta_{i,j+mu} + delta_{i,j-mu}); for L = 2
    in some dimension the two directions coincide and add up.
    """
    V = params.sites
    shape = params.lengths
    h = params.j0 * np.eye(V)
    eye = np.eye(V).reshape(*shape, V)
    for axis in range(params.d):
        h -= params.j * np.roll(eye, 1, axis=axis).reshape(V, V)
        h -= params.j * np.roll(eye, -1, axis=axis).reshape(V, V)
    return h


@dataclass
class GaussianLatticeState:
    """Gaussian lattice state: mean vectors and covariance blocks."""

    X: np.ndarray
    P: np.ndarray
    CX: np.ndarray
    CP: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        V = self.X.shape[0]
        for name in ("CX", "CP", "U"):
            m = getattr(self, name)
            if m.shape != (V, V):
                raise ValueError(f"{name} must be {V}x{V}")

    @property
    def sites(self) -> int:
        return self.X.shape[0]

    def copy(self) -> "GaussianLatticeState":
        return GaussianLatticeState(
            self.X.copy(), self.P.copy(), self.CX.copy(), self.CP.copy(), self.U.copy()
        )


def vacuum_lattice_state(sites: int) -> GaussianLatticeState:
    return GaussianLatticeState(
        X=np.zeros(sites),
        P=np.zeros(sites),
        CX=0.5 * np.eye(sites),
        CP=0.5 * np.eye(sites),
        U=np.zeros((sites, sites)),
    )


def _lattice_riccati_rhs(CX, CP, U, h, gamma):
    dCX = h @ U.T + U @ h - 4.0 * gamma * CX @ CX
    dCP = -h @ U - U.T @ h - 4.0 * gamma * U.T @ U + gamma * np.eye(CX.shape[0])
    dU = h @ CP - CX @ h - 4.0 * gamma * CX @ U
    return dCX, dCP, dU


def riccati_step_lattice(
    state: GaussianLatticeState, params: LatticeParams, dt: float, h: np.ndarray | None = None
) -> GaussianLatticeState:
    """One RK4 step of the matrix covariance flow; means untouched."""
    if h is None:
        h = hamiltonian_matrix(params)
    g = params.gamma
    CX, CP, U = state.CX, state.CP, state.U
    k1 = _lattice_riccati_rhs(CX, CP, U, h, g)
    k2 = _lattice_riccati_rhs(
        CX + 0.5 * dt * k1[0], CP + 0.5 * dt * k1[1], U + 0.5 * dt * k1[2], h, g
    )
    k3 = _lattice_riccati_rhs(
        CX + 0.5 * dt * k2[0], CP + 0.5 * dt * k2[1], U + 0.5 * dt * k2[2], h, g
    )
    k4 = _lattice_riccati_rhs(CX + dt * k3[0], CP + dt * k3[1], U + dt * k3[2], h, g)
    new_CX = CX + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    new_CP = CP + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    new_U = U + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    if np.any(np.linalg.eigvalsh(new_CX) <= 0):
        raise InstabilityError("C^X lost positive-definiteness (dt too large)")
    return GaussianLatticeState(state.X.copy(), state.P.copy(), new_CX, new_CP, new_U)


def means_step_lattice(
    state: GaussianLatticeState,
    params: LatticeParams,
    dI: np.ndarray,
    dt: float,
    h: np.ndarray | None = None,
):
    """One Euler-Maruyama step of the record-driven mean vectors."""
    if h is None:
        h = hamiltonian_matrix(params)
    g = params.gamma
    sg = 2.0 * np.sqrt(g)
    X, P = state.X, state.P
    new_X = X + (-4.0 * g * state.CX @ X + h @ P) * dt + sg * state.CX @ dI
    new_P = P - (h @ X + 4.0 * g * state.U.T @ X) * dt + sg * state.U.T @ dI
    return new_X, new_P


class LatticeTrajectory(NamedTuple):
    times: np.ndarray
    X: np.ndarray  # (n_steps + 1, V)
    P: np.ndarray
    tracked: dict  # (block, i, j) -> history array, n_steps + 1 entries
    final_state: GaussianLatticeState
    cov_snapshots: dict  # time -> (CX, CP, U)
    record: MeasurementRecord


def simulate_trajectory_lattice(
    params: LatticeParams,
    init: GaussianLatticeState,
    grid: TimeGrid,
    seed: SeedSpec,
    track: tuple = (),
    snapshot_times: tuple = (),
) -> LatticeTrajectory:
    """Direct real-space simulation of one conditional lattice trajectory.

    ``track`` lists (block, i, j) entries, block in {"CX", "CP", "U"},
    whose covariance history is recorded every step; ``snapshot_times``
    requests full covariance snapshots.  The record is
    ``dI_i = 2 sqrt(g) <x_i> dt + dW_i``.

    This is the general (slow) path: cost O(V^3) per step.  Ensemble
    production runs use the momentum-space engine in
    :mod:`boselat.ensemble`.
    """
    V = params.sites
    if init.sites != V:
        raise ValueError("initial state size does not match the lattice")
    h = hamiltonian_matrix(params)
    g = params.gamma
    sg = 2.0 * np.sqrt(g)
    n = grid.n_steps
    dW = generate_wiener(grid, V, seed)
    state = init.copy()
    X_hist = np.empty((n + 1, V))
    P_hist = np.empty((n + 1, V))
    X_hist[0], P_hist[0] = state.X, state.P
    tracked = {key: np.empty(n + 1) for key in track}
    for key in track:
        block, i, j = key
        tracked[key][0] = getattr(state, block)[i, j]
    snap_idx = {grid.index_of(t): t for t in snapshot_times}
    snapshots = {}
    dI_all = np.empty((V, n))
    for k in range(n):
        dI = sg * state.X * grid.dt + dW[:, k]
        dI_all[:, k] = dI
        new_X, new_P = means_step_lattice(state, params, dI, grid.dt, h=h)
        state = riccati_step_lattice(state, params, grid.dt, h=h)
        state.X, state.P = new_X, new_P
        X_hist[k + 1], P_hist[k + 1] = new_X, new_P
        for key in track:
            block, i, j = key
            tracked[key][k + 1] = getattr(state, block)[i, j]
        if k + 1 in snap_idx:
            snapshots[snap_idx[k + 1]] = (
                state.CX.copy(),
                state.CP.copy(),
                state.U.copy(),
            )
    record = MeasurementRecord(grid=grid, increments=dI_all)
    times = grid.t0 + grid.dt * np.arange(n + 1)
    return LatticeTrajectory(times, X_hist, P_hist, tracked, state, snapshots, record)


def integrate_covariances_momentum(
    params: LatticeParams,
    t_final: float,
    dt: float,
    store_every: int = 0,
    init=None,
):
    """Per-momentum covariance flow from a translation-invariant start.

    Every momentum is an independent single-site Riccati copy with
    h0 -> h_q.  ``init`` is a (3,) triple applied to all momenta (vacuum
    by default).  Returns ``(h_q_flat, final (3, V) array, history)``
    where history has shape (n_saved, 3, V) when ``store_every > 0``.
    """
    h_q = dispersion_grid(params).ravel().astype(float)
    if init is None:
        init = (0.5, 0.5, 0.0)
    v = np.full(h_q.shape, float(init[0]))
    w = np.full(h_q.shape, float(init[1]))
    u = np.full(h_q.shape, float(init[2]))
    n_steps = int(round(t_final / dt))
    if store_every > 0:
        n_saved = n_steps // store_every
        out = np.empty((n_saved, 3, h_q.size))
    else:
        out = np.empty((0, 3, 1))
    status = _riccati_rk4(v, w, u, h_q, params.gamma, dt, n_steps, store_every, out)
    if status < 0:
        raise InstabilityError("per-momentum covariance flow lost positivity")
    final = np.vstack([v, w, u])
    return h_q, final, (out if store_every > 0 else None)


def circulant_from_profile(profile: np.ndarray, lengths: tuple[int, ...]) -> np.ndarray:
    """Build the V x V translation-invariant matrix M_ij = c[(r_i - r_j) mod L]."""
    shape = tuple(lengths)
    V = int(np.prod(shape))
    prof = np.asarray(profile).reshape(shape)
    idx = np.unravel_index(np.arange(V), shape)
    out = np.empty((V, V))
    for jj in range(V):
        rj = np.unravel_index(jj, shape)
        sep = tuple((idx[a] - rj[a]) % shape[a] for a in range(len(shape)))
        out[:, jj] = prof[sep]
    return out


def covariance_matrices_from_momentum(
    triples_q, lengths: tuple[int, ...]
):
    """Inverse-transform per-momentum (v_q, w_q, u_q) into (C^X, C^P, U) matrices."""
    shape = tuple(lengths)
    v_q, w_q, u_q = (np.asarray(t).reshape(shape) for t in triples_q)
    cx = np.real(np.fft.ifftn(v_q))
    cp = np.real(np.fft.ifftn(w_q))
    uu = np.real(np.fft.ifftn(u_q))
    return (
        circulant_from_profile(cx, shape),
        circulant_from_profile(cp, shape),
        circulant_from_profile(uu, shape),
    )
