"""Estimator kernels: analytic, continuum, and designed from correlators.

The conditional means are linear functionals of the measurement record,

    (x_i)_est(t) = 2 sqrt(G) sum_j int K_x(i - j, t - s) dI_j(s),

and similarly for p with K_p.  This module constructs the kernels three
ways:

- closed forms: the single-site damped-cosine filter and the lattice
  kernels given by momentum sums over the steady covariances;
- the continuum two-lobe approximation of K_p valid at large correlation
  length, whose maxima spread ballistically;
- data-driven design: the optimal time-translationally invariant linear
  filter solves a causal (Wiener-Hopf) integral equation whose kernel is
  the stationary part of the record-record correlator, subject to two
  moment constraints fixed by the record-observable cross-correlator.

Convention: kernel values are stored WITHOUT the global 2 sqrt(G)
estimator prefactor; :func:`boselat.postselect.compute_estimators`
applies it.  This keeps a single source of truth for the prefactor.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import curve_fit

from .errors import (
    GaplessParametersError,
    InsufficientDataError,
    UnsupportedParameterError,
)
from .gaussian import SingleSiteParams, steady_state_single
from .lattice import LatticeParams, correlation_length, steady_state_lattice
from .records import MeasurementRecord

TRUNCATION_RATIO = 1e-8


@dataclass
class FilterKernel:
    """Sampled space-time kernel K[offset, T] on a uniform causal grid.

    ``offsets`` are integer site separations r (periodic); ``values`` has
    shape (len(offsets), n_t) with column j sampled at T = j dt.  Values
    exclude the global 2 sqrt(G) prefactor.
    """

    offsets: np.ndarray
    dt: float
    values: np.ndarray
    target: str = "x"
    generator: str = "analytic"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=int)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.offsets.size:
            raise ValueError("values must have one row per spatial offset")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel contains non-finite values")
        if self.target not in ("x", "p"):
            raise ValueError("target must be 'x' or 'p'")

    @property
    def n_t(self) -> int:
        return self.values.shape[1]

    @property
    def t_max(self) -> float:
        return (self.n_t - 1) * self.dt

    def temporal_profile(self, offset: int = 0) -> np.ndarray:
        i = int(np.where(self.offsets == offset)[0][0])
        return self.values[i]

    def truncated(self, t_max: float | None = None, r_max: int | None = None):
        """Restrict support in time and/or space (|r| <= r_max)."""
        vals = self.values
        offs = self.offsets
        if r_max is not None:
            keep = np.abs(offs) <= r_max
            offs, vals = offs[keep], vals[keep]
        if t_max is not None:
            n_keep = min(vals.shape[1], int(np.floor(t_max / self.dt)) + 1)
            vals = vals[:, :n_keep]
        return FilterKernel(
            offsets=offs,
            dt=self.dt,
            values=vals,
            target=self.target,
            generator=self.generator,
            params=dict(self.params),
        )

    def truncated_small(self):
        """Drop trailing times where |K| < 1e-8 of the global maximum."""
        thresh = TRUNCATION_RATIO * np.max(np.abs(self.values))
        col_max = np.max(np.abs(self.values), axis=0)
        keep = np.nonzero(col_max >= thresh)[0]
        n_keep = (keep[-1] + 1) if keep.size else 1
        return self.truncated(t_max=(n_keep - 1) * self.dt)


def _auto_t_max(tau: float) -> float:
    # e^{-T/tau} reaches the 1e-8 truncation ratio at T = tau ln(1e8)
    return tau * np.log(1.0 / TRUNCATION_RATIO)


def analytic_filter_single(
    params: SingleSiteParams, dt: float = 1e-3, t_max: float | None = None
) -> FilterKernel:
    """Closed-form single-site filter, a damped cosine.

    With the 2 sqrt(G) prefactor applied at estimation time, the full
    filter is f(T) = 2 sqrt(G) v_x_inf exp(-T/tau) cos(G h0 tau T) with
    tau = 1/(2 G v_x_inf).
    """
    ss = steady_state_single(params)
    if t_max is None:
        t_max = _auto_t_max(ss.tau)
    T = np.arange(0.0, t_max + 0.5 * dt, dt)
    vals = ss.v_x * np.exp(-T / ss.tau) * np.cos(params.gamma * params.h0 * ss.tau * T)
    return FilterKernel(
        offsets=np.array([0]),
        dt=dt,
        values=vals[None, :],
        target="x",
        generator="analytic",
        params={"h0": params.h0, "gamma": params.gamma},
    )


def analytic_kernels_lattice(
    params: LatticeParams, dt: float = 1e-3, t_max: float | None = None
):
    """Lattice kernels (K_x, K_p) by momentum sums, d=1 real space.

    K_x(r,T) = (1/V) sum_q v_q cos(h_q T / 2 v_q) e^{-2 G v_q T} e^{iqr};
    K_p replaces the bracket by u_q cos(.) - sin(.)/2, the exact Green's
    function of the conditional-mean ODEs driven by the record.  At T=0
    the K_x profile coincides with the steady-state C^X correlator
    profile and the K_p profile with the steady-state U profile.
    """
    if params.d != 1:
        raise UnsupportedParameterError("real-space kernels implemented for d=1")
    ss = steady_state_lattice(params)
    v_q = ss.v_q.ravel()
    u_q = ss.u_q.ravel()
    h_q = ss.h_q.ravel()
    g = params.gamma
    if t_max is None:
        # slowest mode sets the memory time
        t_max = _auto_t_max(1.0 / (2.0 * g * v_q.min()))
    T = np.arange(0.0, t_max + 0.5 * dt, dt)
    phase = h_q[:, None] * T[None, :] / (2.0 * v_q[:, None])
    damp = np.exp(-2.0 * g * v_q[:, None] * T[None, :])
    coef_x = v_q[:, None] * np.cos(phase) * damp
    coef_p = (u_q[:, None] * np.cos(phase) - 0.5 * np.sin(phase)) * damp
    # (1/V) sum_q c_q e^{iqr} is the numpy inverse FFT over the q axis
    kx_vals = np.real(np.fft.ifft(coef_x, axis=0))
    kp_vals = np.real(np.fft.ifft(coef_p, axis=0))
    L = params.lengths[0]
    offsets = np.arange(L)
    offsets = np.where(offsets <= L // 2, offsets, offsets - L)
    meta = {
        "j0": params.j0,
        "j": params.j,
        "gamma": params.gamma,
        "lengths": list(params.lengths),
    }
    k_x = FilterKernel(offsets, dt, kx_vals, target="x", generator="analytic", params=meta)
    k_p = FilterKernel(offsets, dt, kp_vals, target="p", generator="analytic", params=meta)
    return k_x, k_p


def continuum_kernel_kp(r, T, params: LatticeParams):
    """Large-correlation-length closed form of K_p (two ballistic lobes).

    K_p(r,T) = (1/2pi) [ r / (c^2 T^2 + (r - cT)^2)
                       - r / (c^2 T^2 + (r + cT)^2) ]
    with c = sqrt(J G d / 2).  Valid deep in the gapped long-wavelength
    regime (correlation length >> 1); odd in r.
    """
    xi = correlation_length(params)
    if xi < 10:
        warnings.warn(
            f"continuum kernel used at correlation length {xi:.2f}; "
            "the closed form assumes a large correlation length",
            stacklevel=2,
        )
    r = np.asarray(r, dtype=float)
    c = np.sqrt(params.j * params.gamma * params.d / 2.0)
    cT = c * T
    out = (1.0 / (2.0 * np.pi)) * (
        r / (cT**2 + (r - cT) ** 2) - r / (cT**2 + (r + cT) ** 2)
    )
    return out if out.ndim else float(out)


def stationary_record_kernel(s, params: SingleSiteParams):
    """Causal kernel r_*(s) of the homogeneous filter equation.

    Nonzero only for s < 0:
    r_*(s) = -2 [ (G^2/h0) sin(h0 s) - G^2 s cos(h0 s) ] theta(-s).
    Equals twice the stationary (non-delta, non-secular) part of the
    record-record correlator at lag |s|.
    """
    s = np.asarray(s, dtype=float)
    h0, g = params.h0, params.gamma
    vals = -2.0 * ((g * g / h0) * np.sin(h0 * s) - g * g * s * np.cos(h0 * s))
    out = np.where(s < 0, vals, 0.0)
    return out if out.ndim else float(out)


@dataclass
class CorrelatorTables:
    """Record-record correlator S and cross-correlator g over lags.

    ``S`` excludes the discrete delta contribution at lag 0, whose weight
    (1/dt on the grid) is stored in ``delta_weight``.  ``S`` is the
    stationary part: the component growing linearly in absolute time has
    been removed by per-lag linear regression, which leaves an additive
    cos(h0 lag) ambiguity that filter design absorbs (see
    :func:`design_filter_wiener_hopf`).
    """

    lags: np.ndarray
    S: np.ndarray
    g: np.ndarray
    delta_weight: float
    dt: float
    n_samples: int = 0

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        self.g = np.asarray(self.g, dtype=float)


def analytic_correlator_tables(
    params: SingleSiteParams, dt: float, max_lag: float
) -> CorrelatorTables:
    """Tables built from the closed forms instead of data.

    S(lag) = (G^2/h0) sin(h0 lag) - G^2 lag cos(h0 lag) for lag > 0
    (half of r_*(-lag)); g is the matching damped cosine of the true
    filter, unused by the homogeneous design route and stored for
    completeness.
    """
    n = int(round(max_lag / dt)) + 1
    lags = dt * np.arange(n)
    S = 0.5 * stationary_record_kernel(-lags, params)
    ss = steady_state_single(params)
    g_vals = (
        2.0 * np.sqrt(params.gamma)
        * ss.v_x
        * np.exp(-lags / ss.tau)
        * np.cos(params.gamma * params.h0 * ss.tau * lags)
    )
    return CorrelatorTables(
        lags=lags, S=S, g=g_vals, delta_weight=1.0 / dt, dt=dt, n_samples=0
    )


def empirical_correlators(
    records: list[MeasurementRecord],
    final_measurements: np.ndarray,
    max_lag: float,
    t_start: float = 0.0,
) -> CorrelatorTables:
    """Estimate S and g from an ensemble of single-site records.

    S(lag) is the ensemble and time average of dI(t) dI(t - lag)/dt^2
    over t in [t_start + lag, t_final]; for each lag the component linear
    in the pair midpoint (t + (t - lag))/2 is removed by regression and S
    is reported at the window midpoint.  The delta contribution at lag 0
    (weight 1/dt on the grid) is subtracted and stored separately.
    g(lag) is the ensemble average of (final measurement) dI(t_f - lag)/dt.
    """
    if len(records) < 2:
        raise InsufficientDataError("need at least 2 records")
    grid = records[0].grid
    dt = grid.dt
    n_steps = grid.n_steps
    k0 = grid.index_of(t_start) if t_start > 0 else 0
    n_lag = int(round(max_lag / dt)) + 1
    if k0 + n_lag >= n_steps:
        raise InsufficientDataError("record window shorter than the max lag")
    n_win = n_steps - k0
    # per-lag accumulators over (trajectory, time) pairs
    sum_p = np.zeros(n_lag)       # sum of products
    sum_mp = np.zeros(n_lag)      # sum of midpoint * product
    counts = np.zeros(n_lag)
    sum_m = np.zeros(n_lag)
    sum_m2 = np.zeros(n_lag)
    g_sum = np.zeros(n_lag)
    t_abs = grid.t0 + dt * np.arange(n_steps)
    nfft = 1 << int(np.ceil(np.log2(2 * n_win)))
    for rec, meas in zip(records, final_measurements):
        d = rec.increments[0, k0:]
        td = t_abs[k0:] * d
        fd = np.fft.rfft(d, nfft)
        ftd = np.fft.rfft(td, nfft)
        # correlate(d, d)[l] = sum_k d_k d_{k-l}
        cdd = np.fft.irfft(fd * np.conj(fd), nfft)[:n_lag]
        ctd = np.fft.irfft(ftd * np.conj(fd), nfft)[:n_lag]
        sum_p += cdd
        # midpoint of the pair (t_k, t_{k-l}) is t_k - l dt / 2
        sum_mp += ctd - (dt * np.arange(n_lag) / 2.0) * cdd
        g_sum += meas * rec.increments[0, n_steps - n_lag:][::-1]
    n_rec = len(records)
    lag_idx = np.arange(n_lag)
    counts = n_rec * (n_win - lag_idx).astype(float)
    # midpoint sums depend only on the lag, not the record
    for l in range(n_lag):
        mids = t_abs[k0 + l :] - l * dt / 2.0
        sum_m[l] = n_rec * mids.sum()
        sum_m2[l] = n_rec * (mids**2).sum()
    mean_m = sum_m / counts
    var_m = sum_m2 / counts - mean_m**2
    mean_p = sum_p / counts
    cov_mp = sum_mp / counts - mean_m * mean_p
    slope = np.where(var_m > 0, cov_mp / np.where(var_m > 0, var_m, 1.0), 0.0)
    # stationary value at the common window midpoint
    m_ref = mean_m[0]
    S = (mean_p + slope * (m_ref - mean_m)) / dt**2
    delta = 1.0 / dt
    S[0] -= delta
    g_vals = g_sum / (n_rec * dt)
    return CorrelatorTables(
        lags=dt * lag_idx,
        S=S,
        g=g_vals,
        delta_weight=delta,
        dt=dt,
        n_samples=n_rec,
    )


def filter_ode_roots(params: SingleSiteParams) -> np.ndarray:
    """Exponential response rates of the optimal filter.

    The four roots lambda = +-(1/tau +- i G h0 tau) of
    (lambda^2 + h0^2)^2 + 4 G^2 h0^2 = 0; the growing pair is discarded
    when building causal filters.
    """
    if not params.h0 > 0:
        raise UnsupportedParameterError("roots defined for h0 > 0")
    ss = steady_state_single(params)
    base = 1.0 / ss.tau + 1j * params.gamma * params.h0 * ss.tau
    return np.array([base, np.conj(base), -base, -np.conj(base)])


def design_filter_wiener_hopf(
    tables: CorrelatorTables,
    params: SingleSiteParams,
    t_max: float | None = None,
    ridge: float = 1e-6,
) -> FilterKernel:
    """Solve the causal filter equation from correlator tables.

    Discretizes f(s) + int_0^tmax S(|s - s'|) f(s') ds' = c1 cos(h0 s)
    + c2 sin(h0 s) + c3 s cos(h0 s) + c4 s sin(h0 s) on [0, t_max] with
    the symmetric two-sided correlator (the delta at lag 0 is the
    identity term).  The right-hand amplitudes c1..c4 are free unknowns:
    they span the image of the secular and additive-cos(h0 lag) parts of
    the record correlator, so the detrending ambiguity of empirical
    tables, which is separable as cos(h0 s) cos(h0 s') + sin sin', is
    absorbed exactly whatever f is.  The two moment constraints
    int f cos(h0 s) ds = 1/(2 sqrt(G)) and int f sin(h0 s) ds = 0 are
    enforced as heavily weighted rows of a ridge-regularized
    least-squares system.  The result is stored in the no-prefactor
    kernel convention (solution divided by 2 sqrt(G)).
    """
    dt = tables.dt
    h0, g = params.h0, params.gamma
    ss = steady_state_single(params)
    if t_max is None:
        t_max = min(8.0 * ss.tau, tables.lags[-1])
    n = int(round(t_max / dt)) + 1
    if n > tables.S.size:
        raise InsufficientDataError(
            f"tables cover lags up to {tables.lags[-1]}, need {t_max}"
        )
    s_grid = dt * np.arange(n)
    # A f = rhs rows: identity (the lag-0 delta) + symmetric convolution
    A = np.eye(n) + toeplitz(tables.S[:n]) * dt
    # unknowns: f samples plus the four right-hand-side amplitudes
    basis = np.column_stack(
        [
            np.cos(h0 * s_grid),
            np.sin(h0 * s_grid),
            s_grid * np.cos(h0 * s_grid),
            s_grid * np.sin(h0 * s_grid),
        ]
    )
    n_c = basis.shape[1]
    M = np.zeros((n + 2, n + n_c))
    rhs = np.zeros(n + 2)
    M[:n, :n] = A
    M[:n, n:] = -basis / np.abs(basis).max(axis=0)
    w_c = float(n)  # constraints dominate the least-squares fit
    M[n, :n] = w_c * np.cos(h0 * s_grid) * dt
    M[n + 1, :n] = w_c * np.sin(h0 * s_grid) * dt
    rhs[n] = w_c / (2.0 * np.sqrt(g))
    gram = M.T @ M
    scale = np.trace(gram) / (n + n_c)
    if not np.isfinite(scale) or scale <= 0:
        raise InsufficientDataError("degenerate correlator tables")
    gram += ridge * scale * np.eye(n + n_c)
    # the infinite-domain problem keeps only bounded solutions; on the
    # finite domain an exponential tail penalty rejects the growing
    # branch (the true filter decays to ~e^{-t_max/tau} there, so the
    # penalty costs it nothing)
    tail = scale * np.exp(2.0 * (s_grid - t_max) / ss.tau)
    gram[:n, :n] += np.diag(tail)
    sol = np.linalg.solve(gram, M.T @ rhs)
    f = sol[:n]
    return FilterKernel(
        offsets=np.array([0]),
        dt=dt,
        values=(f / (2.0 * np.sqrt(g)))[None, :],
        target="x",
        generator="designed",
        params={"h0": h0, "gamma": g, "rhs_amplitudes": sol[n:].tolist()},
    )


def fit_damped_cosine(times: np.ndarray, values: np.ndarray):
    """Fit A exp(-k t) cos(w t + phi); returns (A, decay k, frequency w, phi).

    Initial guesses: frequency from the dominant FFT bin, decay from the
    log-envelope slope.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    dt = times[1] - times[0]
    spec = np.abs(np.fft.rfft(values - values.mean()))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(values.size, dt)
    w0 = freqs[np.argmax(spec[1:]) + 1]
    env = np.abs(values) + 1e-30
    k0 = max(
        1e-3, -np.polyfit(times, np.log(env), 1)[0]
    )
    a0 = float(np.abs(values[0])) or 1.0

    def model(t, a, k, w, phi):
        return a * np.exp(-k * t) * np.cos(w * t + phi)

    popt, _ = curve_fit(
        model, times, values, p0=[a0, k0, w0, 0.0], maxfev=20000
    )
    a, k, w, phi = popt
    if a < 0:
        a, phi = -a, phi + np.pi
    if w < 0:
        w, phi = -w, -phi
    return float(a), float(k), float(w), float(phi)


def cost_surrogate(estimates: np.ndarray, measured: np.ndarray) -> float:
    """Mean squared difference between measured outcomes and estimators.

    Equal to the irreducible conditional variance plus the estimator's
    excess error, so it ranks filters even though its absolute floor is
    unknown without postselection.
    """
    estimates = np.asarray(estimates, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if estimates.size == 0:
        raise InsufficientDataError("empty dataset")
    return float(np.mean((measured - estimates) ** 2))


def save_kernel(kernel: FilterKernel, csv_path, meta_path=None) -> None:
    """CSV rows (r, T, value) plus a JSON metadata sidecar."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "T", "value"])
        for i, r in enumerate(kernel.offsets):
            for j in range(kernel.n_t):
                writer.writerow([int(r), j * kernel.dt, repr(kernel.values[i, j])])
    if meta_path is not None:
        meta = {
            "target": kernel.target,
            "generator": kernel.generator,
            "dt": kernel.dt,
            "params": kernel.params,
        }
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=2)


def save_correlators(tables: CorrelatorTables, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "S", "g"])
        for lag, s_val, g_val in zip(tables.lags, tables.S, tables.g):
            writer.writerow([lag, repr(s_val), repr(g_val)])
