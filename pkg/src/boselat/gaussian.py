"""Single-site Gaussian conditional dynamics.

A continuously monitored harmonic mode stays Gaussian, so the conditional
state is fully described by the quadrature means (x, p) and the covariances
(v_x, v_p, u).  The covariances obey a closed, deterministic Riccati system

    v_x' = 2 h0 u - 4 G v_x^2
    v_p' = -2 h0 u + G - 4 G u^2
    u'   = h0 (v_p - v_x) - 4 G u v_x

(G is the measurement rate), while the means are driven by the record dI:

    d(x, p) = [[-4 G v_x, h0], [-h0 - 4 G u, 0]] (x, p) dt
              + 2 sqrt(G) (v_x, u) dI.

The Riccati flow has a unique stable fixed point for h0 > 0, reached from
any positive-definite initial covariance; its closed form is implemented in
:func:`steady_state_single`.  Covariance histories are deterministic and
identical across noise realizations; only the means are stochastic.

Covariances are advanced with classical fixed-step RK4 (the system is a
smooth ODE), means with Euler-Maruyama on the same grid; for the linear
means system with frozen covariances Euler-Maruyama is exact in
distribution per step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import InstabilityError, UnsupportedParameterError
from .records import MeasurementRecord, SeedSpec, TimeGrid, generate_wiener

HEISENBERG_TOL = 1e-9


@dataclass(frozen=True)
class SingleSiteParams:
    """On-site energy h0 and measurement rate gamma (both in units of gamma)."""

    h0: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise UnsupportedParameterError(f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class GaussianState1:
    """Gaussian state of one mode: means plus symmetric covariances."""

    mean_x: float = 0.0
    mean_p: float = 0.0
    v_x: float = 0.5
    v_p: float = 0.5
    u: float = 0.0

    def __post_init__(self):
        if not (self.v_x > 0 and self.v_p > 0):
            raise ValueError("variances must be positive")
        if self.v_x * self.v_p - self.u**2 < 0.25 - HEISENBERG_TOL:
            raise ValueError("covariances violate the uncertainty bound")


def vacuum_state() -> GaussianState1:
    return GaussianState1()


class SteadyStateSingle(NamedTuple):
    v_x: float
    v_p: float
    u: float
    tau: float


def steady_state_single(params: SingleSiteParams) -> SteadyStateSingle:
    """Closed-form stable fixed point of the covariance flow, plus the
    memory time tau = 1 / (2 gamma v_x_inf).

    Requires h0 > 0; for h0 <= 0 the flow has no positive fixed point.
    """
    h0, g = params.h0, params.gamma
    if not h0 > 0:
        raise UnsupportedParameterError("steady state requires h0 > 0")
    a = h0 / (4.0 * g)
    root = np.sqrt(a * a + 0.25)
    denom = a + root
    v_x = np.sqrt(h0 / (8.0 * g)) / np.sqrt(denom)
    v_p = np.sqrt(2.0 * g / h0) * root / np.sqrt(denom)
    u = 0.25 / denom
    tau = 1.0 / (2.0 * g * v_x)
    return SteadyStateSingle(float(v_x), float(v_p), float(u), float(tau))


def riccati_rhs(v_x, v_p, u, h0, gamma):
    dvx = 2.0 * h0 * u - 4.0 * gamma * v_x * v_x
    dvp = -2.0 * h0 * u + gamma - 4.0 * gamma * u * u
    du = h0 * (v_p - v_x) - 4.0 * gamma * u * v_x
    return dvx, dvp, du


@njit(cache=True)
def _riccati_rk4(v_x, v_p, u, h0_arr, gamma, dt, n_steps, store_every, out):
    """Fixed-step RK4 for a batch of covariance triples (in-place arrays).

    ``h0_arr`` carries one on-site energy per batch entry, so a batch can be
    a set of initial conditions at fixed h0 or one momentum grid of
    decoupled modes.
    """
    n_saved = 0
    for k in range(n_steps):
        for i in range(v_x.shape[0]):
            h0 = h0_arr[i]
            a, b, c = v_x[i], v_p[i], u[i]
            k1a = 2.0 * h0 * c - 4.0 * gamma * a * a
            k1b = -2.0 * h0 * c + gamma - 4.0 * gamma * c * c
            k1c = h0 * (b - a) - 4.0 * gamma * c * a
            a2, b2, c2 = a + 0.5 * dt * k1a, b + 0.5 * dt * k1b, c + 0.5 * dt * k1c
            k2a = 2.0 * h0 * c2 - 4.0 * gamma * a2 * a2
            k2b = -2.0 * h0 * c2 + gamma - 4.0 * gamma * c2 * c2
            k2c = h0 * (b2 - a2) - 4.0 * gamma * c2 * a2
            a3, b3, c3 = a + 0.5 * dt * k2a, b + 0.5 * dt * k2b, c + 0.5 * dt * k2c
            k3a = 2.0 * h0 * c3 - 4.0 * gamma * a3 * a3
            k3b = -2.0 * h0 * c3 + gamma - 4.0 * gamma * c3 * c3
            k3c = h0 * (b3 - a3) - 4.0 * gamma * c3 * a3
            a4, b4, c4 = a + dt * k3a, b + dt * k3b, c + dt * k3c
            k4a = 2.0 * h0 * c4 - 4.0 * gamma * a4 * a4
            k4b = -2.0 * h0 * c4 + gamma - 4.0 * gamma * c4 * c4
            k4c = h0 * (b4 - a4) - 4.0 * gamma * c4 * a4
            v_x[i] = a + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            v_p[i] = b + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            u[i] = c + dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
            if v_x[i] <= 0.0:
                return -(k + 1)
        if store_every > 0 and (k + 1) % store_every == 0:
            out[n_saved, 0, :] = v_x
            out[n_saved, 1, :] = v_p
            out[n_saved, 2, :] = u
            n_saved += 1
    return n_saved


def riccati_step_single(
    state: GaussianState1, params: SingleSiteParams, dt: float
) -> GaussianState1:
    """One RK4 step of the covariance flow; means are left untouched."""
    v_x = np.array([state.v_x])
    v_p = np.array([state.v_p])
    u = np.array([state.u])
    status = _riccati_rk4(
        v_x, v_p, u, np.array([params.h0]), params.gamma, dt, 1, 0, np.empty((0, 3, 1))
    )
    if status < 0:
        raise InstabilityError(f"covariance step lost positivity at dt={dt}")
    return replace(state, v_x=float(v_x[0]), v_p=float(v_p[0]), u=float(u[0]))


def integrate_covariances(
    params: SingleSiteParams,
    init,
    t_final: float,
    dt: float,
):
    """Integrate the covariance flow to t_final with fixed-step RK4.

    ``init`` is either a (v_x, v_p, u) triple or a (3, n_batch) array of
    triples; a batch is integrated jointly.  Returns the final (3,) or
    (3, n_batch) array.
    """
    arr = np.atleast_2d(np.asarray(init, dtype=float))
    if arr.shape[0] != 3:
        arr = arr.T
    v_x, v_p, u = (np.ascontiguousarray(row.copy()) for row in arr)
    n_steps = int(round(t_final / dt))
    h0_arr = np.full(v_x.shape[0], params.h0)
    status = _riccati_rk4(
        v_x, v_p, u, h0_arr, params.gamma, dt, n_steps, 0, np.empty((0, 3, 1))
    )
    if status < 0:
        raise InstabilityError(f"covariance flow lost positivity (dt={dt})")
    out = np.vstack([v_x, v_p, u])
    return out[:, 0] if np.asarray(init).ndim == 1 else out


def means_step_single(
    state: GaussianState1, params: SingleSiteParams, dI: float, dt: float
) -> tuple[float, float]:
    """One Euler-Maruyama step of the record-driven means."""
    h0, g = params.h0, params.gamma
    x, p = state.mean_x, state.mean_p
    sg = 2.0 * np.sqrt(g)
    new_x = x + (-4.0 * g * state.v_x * x + h0 * p) * dt + sg * state.v_x * dI
    new_p = p + (-(h0 + 4.0 * g * state.u) * x) * dt + sg * state.u * dI
    return new_x, new_p


class SingleSiteTrajectory(NamedTuple):
    """History arrays have n_steps + 1 entries (initial state included)."""

    times: np.ndarray
    mean_x: np.ndarray
    mean_p: np.ndarray
    v_x: np.ndarray
    v_p: np.ndarray
    u: np.ndarray
    record: MeasurementRecord


def simulate_trajectory_single(
    params: SingleSiteParams,
    init: GaussianState1,
    grid: TimeGrid,
    seed: SeedSpec,
) -> SingleSiteTrajectory:
    """Simulate one conditional trajectory and its measurement record.

    The record is built from the trajectory's own means,
    ``dI = 2 sqrt(g) <x> dt + dW``, so the covariance history is
    seed-independent while means and record are not.
    """
    h0, g = params.h0, params.gamma
    n = grid.n_steps
    dt = grid.dt
    dW = generate_wiener(grid, 1, seed)[0]
    x = np.empty(n + 1)
    p = np.empty(n + 1)
    v_x = np.empty(n + 1)
    v_p = np.empty(n + 1)
    u = np.empty(n + 1)
    dI = np.empty(n)
    x[0], p[0] = init.mean_x, init.mean_p
    v_x[0], v_p[0], u[0] = init.v_x, init.v_p, init.u
    sg = 2.0 * np.sqrt(g)
    cov = np.array([[init.v_x], [init.v_p], [init.u]])
    h0_arr = np.array([h0])
    for k in range(n):
        dI[k] = sg * x[k] * dt + dW[k]
        x[k + 1] = x[k] + (-4.0 * g * v_x[k] * x[k] + h0 * p[k]) * dt + sg * v_x[k] * dI[k]
        p[k + 1] = p[k] + (-(h0 + 4.0 * g * u[k]) * x[k]) * dt + sg * u[k] * dI[k]
        status = _riccati_rk4(cov[0], cov[1], cov[2], h0_arr, g, dt, 1, 0, np.empty((0, 3, 1)))
        if status < 0:
            raise InstabilityError("covariance flow lost positivity")
        v_x[k + 1], v_p[k + 1], u[k + 1] = cov[0, 0], cov[1, 0], cov[2, 0]
    record = MeasurementRecord(grid=grid, increments=dI[None, :])
    times = grid.t0 + dt * np.arange(n + 1)
    return SingleSiteTrajectory(times, x, p, v_x, v_p, u, record)


def unconditional_variance_single(t: float, params: SingleSiteParams) -> float:
    """Record-averaged variance of x at time t, starting from vacuum.

    The average over measurement realizations squares the mean only after
    averaging, so the result grows linearly without reaching a steady state:
    (1 + g t)/2 - g sin(2 h0 t) / (4 h0).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    h0, g = params.h0, params.gamma
    if h0 == 0:
        return 0.5 * (1.0 + g * t) - 0.5 * g * t  # limit of sin(2 h0 t)/(2 h0)
    return 0.5 * (1.0 + g * t) - g * np.sin(2.0 * h0 * t) / (4.0 * h0)
