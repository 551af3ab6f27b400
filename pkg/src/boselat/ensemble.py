"""Batched Monte Carlo ensembles with deterministic per-trajectory seeding.

Every trajectory's randomness comes from its own SeedSpec-derived stream,
consumed in a fixed order (noise path first, then any measurement draws),
so pooled results are independent of chunking and worker scheduling.  The
per-trajectory stream contracts are:

- single-site Gaussian / Fock: one normal block of shape (1, n_steps),
  then one extra draw for the projective measurement sample;
- lattice: normal blocks of shape (V, WIENER_BLOCK) covering the time
  axis in fixed-size pieces, then one standard-normal vector of length V
  for the measurement sample.

Estimators are accumulated online during integration (the record never
needs to be stored): the kernel weight attached to increment k of an
observation at the final step is K((n - 1 - k) dt), which matches the
left-point record convolution evaluated at the last step edge.  Lattice
runs evolve in momentum space, where the circulant covariances act
diagonally and the kernel convolution is a per-momentum product.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .filters import FilterKernel
from .fock import FockOperators, FockState
from .gaussian import SingleSiteParams, _riccati_rk4
from .lattice import LatticeParams, circulant_from_profile, dispersion_grid
from .records import SeedSpec, TimeGrid
from .errors import InstabilityError, TruncationHealthError

WIENER_BLOCK = 250


def seed_plan(master_seed: int, n_traj: int) -> list[SeedSpec]:
    """Deterministic, collision-free per-trajectory seeds."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    return [SeedSpec(master_seed, i) for i in range(n_traj)]


def _kernel_weights(kernel: FilterKernel, n_steps: int) -> np.ndarray:
    """Weight of increment k on the final-step estimator, length n_steps.

    weights[k] = K(0, (n - 1 - k) dt); zero beyond the kernel support.
    """
    prof = kernel.temporal_profile(0)
    w = np.zeros(n_steps)
    n_avail = min(prof.size, n_steps)
    w[n_steps - n_avail :] = prof[:n_avail][::-1]
    return w


class SingleSiteEnsemble(NamedTuple):
    """Final-time ensemble data; arrays indexed by trajectory."""

    mean_x: np.ndarray
    mean_p: np.ndarray
    v_x: float
    v_p: float
    u: float
    estimators: np.ndarray | None
    measured: np.ndarray | None


def run_single_site_ensemble(
    params: SingleSiteParams,
    grid: TimeGrid,
    n_traj: int,
    master_seed: int,
    kernel: FilterKernel | None = None,
    sample_quadrature: str | None = None,
    init=(0.0, 0.0, 0.5, 0.5, 0.0),
    chunk_size: int = 2000,
) -> SingleSiteEnsemble:
    """Vacuum-by-default Gaussian ensemble at a single site.

    Per trajectory: evolve the record-driven means against the shared
    deterministic covariance history, optionally accumulate the kernel
    estimator of the final mean, and optionally draw one projective
    quadrature sample from the final conditional state.
    """
    h0, g = params.h0, params.gamma
    dt, n = grid.dt, grid.n_steps
    x0, p0, vx0, vp0, u0 = init
    # shared covariance history (independent of noise)
    v = np.array([vx0])
    w = np.array([vp0])
    uu = np.array([u0])
    hist = np.empty((n, 3, 1))
    status = _riccati_rk4(v, w, uu, np.array([h0]), g, dt, n, 1, hist)
    if status < 0:
        raise InstabilityError("covariance flow lost positivity")
    v_hist = np.concatenate(([vx0], hist[:, 0, 0]))
    u_hist = np.concatenate(([u0], hist[:, 2, 0]))
    v_fin, w_fin, u_fin = hist[-1, 0, 0], hist[-1, 1, 0], hist[-1, 2, 0]
    weights = _kernel_weights(kernel, n) if kernel is not None else None
    sg = 2.0 * np.sqrt(g)
    all_x = np.empty(n_traj)
    all_p = np.empty(n_traj)
    all_est = np.empty(n_traj) if kernel is not None else None
    all_meas = np.empty(n_traj) if sample_quadrature else None
    for start in range(0, n_traj, chunk_size):
        seeds = [SeedSpec(master_seed, i) for i in range(start, min(start + chunk_size, n_traj))]
        m = len(seeds)
        rngs = [s.rng() for s in seeds]
        dW = np.empty((m, n))
        for i, rng in enumerate(rngs):
            dW[i] = rng.normal(0.0, np.sqrt(dt), size=(1, n))[0]
        x = np.full(m, x0)
        p = np.full(m, p0)
        est = np.zeros(m)
        for k in range(n):
            vx_k, u_k = v_hist[k], u_hist[k]
            dI = sg * x * dt + dW[:, k]
            if weights is not None:
                est += weights[k] * dI
            x_new = x + (-4.0 * g * vx_k * x + h0 * p) * dt + sg * vx_k * dI
            p_new = p + (-(h0 + 4.0 * g * u_k) * x) * dt + sg * u_k * dI
            x, p = x_new, p_new
        sl = slice(start, start + m)
        all_x[sl] = x
        all_p[sl] = p
        if all_est is not None:
            all_est[sl] = sg * est
        if all_meas is not None:
            mean = x if sample_quadrature == "x" else p
            var = v_fin if sample_quadrature == "x" else w_fin
            draws = np.array([rng.standard_normal() for rng in rngs])
            all_meas[sl] = mean + np.sqrt(var) * draws
    return SingleSiteEnsemble(
        mean_x=all_x,
        mean_p=all_p,
        v_x=float(v_fin),
        v_p=float(w_fin),
        u=float(u_fin),
        estimators=all_est,
        measured=all_meas,
    )


class FockEnsemble(NamedTuple):
    mean_x: np.ndarray
    estimators: np.ndarray | None
    measured: np.ndarray | None


def _position_basis(dim: int, x_grid: np.ndarray) -> np.ndarray:
    """Matrix phi[n, i] of harmonic oscillator eigenfunctions at x_grid.

    Recurrence phi_{n+1} = (sqrt(2) x phi_n - sqrt(n) phi_{n-1}) /
    sqrt(n+1), phi_0 = pi^{-1/4} exp(-x^2/2).
    """
    phi = np.empty((dim, x_grid.size))
    phi[0] = np.pi**-0.25 * np.exp(-0.5 * x_grid**2)
    if dim > 1:
        phi[1] = np.sqrt(2.0) * x_grid * phi[0]
    for nn in range(2, dim):
        phi[nn] = (
            np.sqrt(2.0 / nn) * x_grid * phi[nn - 1]
            - np.sqrt((nn - 1.0) / nn) * phi[nn - 2]
        )
    return phi


def run_fock_ensemble(
    params: SingleSiteParams,
    psi0: FockState,
    grid: TimeGrid,
    n_traj: int,
    master_seed: int,
    kernel: FilterKernel | None = None,
    sample_quadrature: str | None = "x",
    chunk_size: int = 500,
    x_grid_half_width: float = 12.0,
    x_grid_points: int = 2400,
    health_tol: float = 1e-6,
) -> FockEnsemble:
    """Batched pure-state trajectories in the truncated number basis.

    Projective x samples are drawn from the exact position density
    |psi(x)|^2 of each final state by inverse-CDF sampling, so
    non-Gaussian features are respected.  ``health_tol`` bounds the
    worst per-trajectory population in the top 10% of levels; relax it
    when rare displaced trajectories brush the cutoff.
    """
    dim = psi0.dim
    ops = FockOperators.build(dim)
    h0, g = params.h0, params.gamma
    dt, n = grid.dt, grid.n_steps
    sg = np.sqrt(g)
    weights = _kernel_weights(kernel, n) if kernel is not None else None
    x_mat, n_mat = ops.x, ops.n
    xg = np.linspace(-x_grid_half_width, x_grid_half_width, x_grid_points)
    phi = _position_basis(dim, xg) if sample_quadrature == "x" else None
    all_x = np.empty(n_traj)
    all_est = np.empty(n_traj) if kernel is not None else None
    all_meas = np.empty(n_traj) if sample_quadrature else None
    for start in range(0, n_traj, chunk_size):
        seeds = [SeedSpec(master_seed, i) for i in range(start, min(start + chunk_size, n_traj))]
        m = len(seeds)
        rngs = [s.rng() for s in seeds]
        dW = np.empty((m, n))
        for i, rng in enumerate(rngs):
            dW[i] = rng.normal(0.0, np.sqrt(dt), size=(1, n))[0]
        psi = np.tile(psi0.normalized().amps, (m, 1))
        est = np.zeros(m)
        ex = np.empty(m)
        for k in range(n):
            x_psi = psi @ x_mat.T
            ex[:] = np.real(np.einsum("ij,ij->i", psi.conj(), x_psi))
            m_psi = x_psi - ex[:, None] * psi
            m2_psi = (m_psi @ x_mat.T) - ex[:, None] * m_psi
            w = dW[:, k][:, None]
            psi = (
                psi
                + (-1j * h0 * (psi @ n_mat.T) - g * m2_psi) * dt
                + sg * m_psi * w
                + 0.5 * g * m2_psi * w * w
            )
            psi /= np.linalg.norm(psi, axis=1)[:, None]
            if weights is not None:
                dI = 2.0 * sg * ex * dt + dW[:, k]
                est += weights[k] * dI
        top = max(1, int(np.ceil(0.1 * dim)))
        worst = float(np.max(np.sum(np.abs(psi[:, -top:]) ** 2, axis=1)))
        if worst > health_tol:
            raise TruncationHealthError(
                f"population {worst:.2e} in the top levels across the ensemble"
            )
        x_final = np.real(np.einsum("ij,ij->i", psi.conj(), psi @ x_mat.T))
        sl = slice(start, start + m)
        all_x[sl] = x_final
        if all_est is not None:
            all_est[sl] = 2.0 * sg * est
        if all_meas is not None:
            dens = np.abs(psi @ phi) ** 2
            cdf = np.cumsum(dens, axis=1)
            cdf /= cdf[:, -1][:, None]
            us = np.array([rng.uniform() for rng in rngs])
            idx = np.array([np.searchsorted(cdf[i], us[i]) for i in range(m)])
            all_meas[sl] = xg[np.minimum(idx, xg.size - 1)]
    return FockEnsemble(mean_x=all_x, estimators=all_est, measured=all_meas)


def lattice_kernel_symbols(
    params: LatticeParams, n_steps: int, dt: float, target: str = "p"
) -> np.ndarray:
    """Per-momentum kernel coefficients, shape (n_steps, V).

    Row k holds the bracketed coefficient of the analytic kernel at
    T = k dt for every momentum: v_q cos(h_q T / 2 v_q) e^{-2 G v_q T}
    for target 'x', (u_q cos(.) - sin(.)/2) e^{-2 G v_q T} for 'p'.
    The spatial Fourier transform of K(r, T) over r equals this
    coefficient, so momentum-space convolution is a plain product.
    """
    from .lattice import steady_state_lattice

    ss = steady_state_lattice(params)
    v_q = ss.v_q.ravel()
    u_q = ss.u_q.ravel()
    h_q = ss.h_q.ravel()
    g = params.gamma
    T = dt * np.arange(n_steps)
    phase = h_q[None, :] * T[:, None] / (2.0 * v_q[None, :])
    damp = np.exp(-2.0 * g * v_q[None, :] * T[:, None])
    if target == "x":
        return v_q[None, :] * np.cos(phase) * damp
    return (u_q[None, :] * np.cos(phase) - 0.5 * np.sin(phase)) * damp


def symbols_from_kernel(kernel: FilterKernel, length: int, n_steps: int) -> np.ndarray:
    """Momentum symbols of an explicit (possibly truncated) d=1 kernel.

    Places each offset row on the periodic lattice and FFTs over space;
    rows beyond the kernel's temporal support are zero.  Output shape
    (n_steps, length), complex.
    """
    spatial = np.zeros((length, kernel.n_t))
    for i, r in enumerate(kernel.offsets):
        spatial[int(r) % length] += kernel.values[i]
    sym = np.fft.fft(spatial, axis=0).T  # (n_t, length)
    out = np.zeros((n_steps, length), dtype=complex)
    out[: min(n_steps, kernel.n_t)] = sym[: min(n_steps, kernel.n_t)]
    return out


class LatticeEnsemble(NamedTuple):
    """Final-time lattice ensemble; estimator arrays are (n_traj, V)."""

    X: np.ndarray
    P: np.ndarray
    estimators: dict
    measured: np.ndarray | None
    cov_profiles: tuple  # final (c_x, c_p, c_u) circulant profiles


def run_lattice_ensemble(
    params: LatticeParams,
    grid: TimeGrid,
    n_traj: int,
    master_seed: int,
    kernel_symbols: dict | None = None,
    sample_quadrature: str | None = "p",
    chunk_size: int = 1000,
) -> LatticeEnsemble:
    """Momentum-space ensemble for translation-invariant vacuum starts.

    Each momentum evolves as an independent single-site copy; means and
    record are propagated as complex momentum amplitudes, estimators are
    accumulated as per-momentum products, and the final projective sample
    uses the (trajectory-independent) final covariance matrix.
    ``kernel_symbols`` maps names to (n_steps, V) coefficient arrays (see
    :func:`lattice_kernel_symbols`); the 2 sqrt(G) estimator prefactor is
    applied here.
    """
    if params.d != 1:
        raise NotImplementedError("ensemble fast path implemented for d=1")
    V = params.sites
    g = params.gamma
    dt, n = grid.dt, grid.n_steps
    sg = 2.0 * np.sqrt(g)
    h_q = dispersion_grid(params).ravel()
    # shared per-momentum covariance history
    v = np.full(V, 0.5)
    w = np.full(V, 0.5)
    uu = np.zeros(V)
    hist = np.empty((n, 3, V))
    status = _riccati_rk4(v, w, uu, h_q.astype(float), g, dt, n, 1, hist)
    if status < 0:
        raise InstabilityError("per-momentum covariance flow lost positivity")
    v_hist = np.vstack([np.full((1, V), 0.5), hist[:, 0, :]])
    u_hist = np.vstack([np.zeros((1, V)), hist[:, 2, :]])
    c_x_fin = np.real(np.fft.ifft(hist[-1, 0, :]))
    c_p_fin = np.real(np.fft.ifft(hist[-1, 1, :]))
    c_u_fin = np.real(np.fft.ifft(hist[-1, 2, :]))
    if sample_quadrature is not None:
        prof = c_x_fin if sample_quadrature == "x" else c_p_fin
        cov = circulant_from_profile(prof, (V,))
        chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    kernel_symbols = kernel_symbols or {}
    names = list(kernel_symbols)
    all_X = np.empty((n_traj, V))
    all_P = np.empty((n_traj, V))
    all_est = {name: np.empty((n_traj, V)) for name in names}
    all_meas = np.empty((n_traj, V)) if sample_quadrature else None
    sqdt = np.sqrt(dt)
    for start in range(0, n_traj, chunk_size):
        seeds = [SeedSpec(master_seed, i) for i in range(start, min(start + chunk_size, n_traj))]
        m = len(seeds)
        rngs = [s.rng() for s in seeds]
        Xq = np.zeros((m, V), dtype=complex)
        Pq = np.zeros((m, V), dtype=complex)
        est_q = {name: np.zeros((m, V), dtype=complex) for name in names}
        k = 0
        while k < n:
            block = min(WIENER_BLOCK, n - k)
            dW = np.empty((m, V, block))
            for i, rng in enumerate(rngs):
                dW[i] = rng.normal(0.0, sqdt, size=(V, WIENER_BLOCK))[:, :block]
            for b in range(block):
                kk = k + b
                v_k = v_hist[kk][None, :]
                u_k = u_hist[kk][None, :]
                dIq = sg * Xq * dt + np.fft.fft(dW[:, :, b], axis=1)
                for name in names:
                    est_q[name] += kernel_symbols[name][n - 1 - kk][None, :] * dIq
                X_new = Xq + (-4.0 * g * v_k * Xq + h_q[None, :] * Pq) * dt + sg * v_k * dIq
                P_new = Pq + (-(h_q[None, :] + 4.0 * g * u_k) * Xq) * dt + sg * u_k * dIq
                Xq, Pq = X_new, P_new
            k += block
        sl = slice(start, start + m)
        all_X[sl] = np.real(np.fft.ifft(Xq, axis=1))
        all_P[sl] = np.real(np.fft.ifft(Pq, axis=1))
        for name in names:
            all_est[name][sl] = sg * np.real(np.fft.ifft(est_q[name], axis=1))
        if all_meas is not None:
            mean = all_P[sl] if sample_quadrature == "p" else all_X[sl]
            z = np.empty((m, V))
            for i, rng in enumerate(rngs):
                z[i] = rng.standard_normal(V)
            all_meas[sl] = mean + z @ chol.T
    return LatticeEnsemble(
        X=all_X,
        P=all_P,
        estimators=all_est,
        measured=all_meas,
        cov_profiles=(c_x_fin, c_p_fin, c_u_fin),
    )
