"""Time grids, reproducible noise, and homodyne measurement records.

The measurement record is the experimentally accessible output of a
continuously monitored run: one increment ``dI`` per lattice site per time
step, where ``dI = 2 sqrt(gamma) <x> dt + dW`` and ``dW`` is a Wiener
increment of variance ``dt``.  Everything downstream (estimators,
correlators, postselection) consumes these records, so this module also
provides the discrete Ito convolution of a record with a space-time filter
kernel.

All containers are immutable after construction and safe to share between
workers; every stochastic quantity is a pure function of a :class:`SeedSpec`.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidWindowError

_HEADER = struct.Struct("<qqd")  # sites, n_steps, dt


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid: steps k cover [t_k, t_k + dt) with t_k = t0 + k dt."""

    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def t_final(self) -> float:
        return self.t0 + self.duration

    def times(self) -> np.ndarray:
        """Left edges t_k of every step."""
        return self.t0 + self.dt * np.arange(self.n_steps)

    def index_of(self, t: float) -> int:
        """Index of the grid step whose left edge is t (snapped to 1e-6 dt)."""
        k = (t - self.t0) / self.dt
        ki = int(round(k))
        if abs(k - ki) > 1e-6:
            raise InvalidWindowError(f"t={t} does not lie on the grid")
        if ki < 0 or ki > self.n_steps:
            raise InvalidWindowError(
                f"t={t} outside grid [{self.t0}, {self.t_final}]"
            )
        return ki


@dataclass(frozen=True)
class SeedSpec:
    """Deterministic per-trajectory randomness.

    The derived stream is a pure function of ``(master_seed,
    trajectory_index)``; distinct indices give statistically independent
    streams (numpy ``SeedSequence`` spawning).
    """

    master_seed: int
    trajectory_index: int = 0

    def rng(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.trajectory_index,)
        )
        return np.random.default_rng(seq)


def generate_wiener(grid: TimeGrid, sites: int, seed: SeedSpec) -> np.ndarray:
    """Wiener increments dW[site, step], i.i.d. normal with variance dt."""
    if sites < 1:
        raise ValueError("sites must be >= 1")
    return seed.rng().normal(0.0, np.sqrt(grid.dt), size=(sites, grid.n_steps))


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-site, per-step homodyne increments dI (shape V x n_steps)."""

    grid: TimeGrid
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=np.float64)
        if inc.ndim != 2 or inc.shape[1] != self.grid.n_steps:
            raise ValueError(
                f"increments must have shape (V, {self.grid.n_steps}), got {inc.shape}"
            )
        if not np.all(np.isfinite(inc)):
            raise ValueError("record contains non-finite increments")
        inc = np.ascontiguousarray(inc)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def sites(self) -> int:
        return self.increments.shape[0]


def integrated_record(record: MeasurementRecord) -> np.ndarray:
    """Cumulative record I[site, step] = sum of dI up to and including step."""
    return np.cumsum(record.increments, axis=1)


def convolve_record_info(record, kernel, site: int, t_obs: float):
    """Discrete Ito convolution of a record with a space-time kernel.

    Computes ``sum_j sum_k K(site - j, t_obs - t_k) dI[j, k]`` over steps with
    ``t_k <= t_obs`` (left-point rule; the increment at step k is attributed
    to [t_k, t_k + dt)).  Site offsets wrap periodically.  If the kernel's
    temporal support extends before the start of the record the sum is
    silently truncated and the discarded fraction of ``sum |K|`` is reported.

    Returns ``(value, truncated_mass_fraction)``.  The kernel's global
    estimator prefactor (2 sqrt(gamma)) is *not* applied here.
    """
    grid = record.grid
    if not np.isclose(kernel.dt, grid.dt, rtol=1e-9):
        raise ValueError("kernel and record use different time steps")
    k_obs = grid.index_of(t_obs)
    if k_obs >= grid.n_steps:
        raise InvalidWindowError(
            "t_obs must be the left edge of a record step; the latest "
            f"observable time is {grid.t0 + (grid.n_steps - 1) * grid.dt}"
        )
    inc = record.increments
    V = record.sites
    values = kernel.values
    n_t = values.shape[1]
    n_avail = min(n_t, k_obs + 1)
    total = 0.0
    for i_r, r in enumerate(kernel.offsets):
        j = (site - int(r)) % V
        seg = inc[j, k_obs - n_avail + 1 : k_obs + 1][::-1]
        total += float(seg @ values[i_r, :n_avail])
    abs_mass = np.abs(values).sum()
    if abs_mass > 0 and n_avail < n_t:
        truncated = np.abs(values[:, n_avail:]).sum() / abs_mass
    else:
        truncated = 0.0
    return total, truncated


def convolve_record(record, kernel, site: int, t_obs: float) -> float:
    """Like :func:`convolve_record_info` but returns only the value."""
    return convolve_record_info(record, kernel, site, t_obs)[0]


def save_record(record: MeasurementRecord, path) -> None:
    """Binary dump: (V, n_steps, dt) 64-bit header + row-major float64 dI."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(record.sites, record.grid.n_steps, record.grid.dt))
        fh.write(np.ascontiguousarray(record.increments).tobytes())


def load_record(path, t0: float = 0.0) -> MeasurementRecord:
    with open(path, "rb") as fh:
        sites, n_steps, dt = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype=np.float64)
    if data.size != sites * n_steps:
        raise ValueError("record file size does not match its header")
    grid = TimeGrid(dt=dt, n_steps=n_steps, t0=t0)
    return MeasurementRecord(grid=grid, increments=data.reshape(sites, n_steps))


def export_record_csv(record: MeasurementRecord, path) -> None:
    """CSV export with one (site, step, dI) row per increment."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site", "step", "dI"])
        for i in range(record.sites):
            for k in range(record.grid.n_steps):
                writer.writerow([i, k, repr(record.increments[i, k])])
