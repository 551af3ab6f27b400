"""Postselection-free recovery of conditional statistics.

The experimentally accessible data per run are one projective quadrature
sample per site and the measurement record.  Filtering the record gives
estimators of the conditional means; binning the measured samples by
estimator value groups runs whose conditional states share (almost) the
same means, so per-bin statistics of the measured values expose the
conditional variances and covariances that are otherwise hidden behind
postselection.

Protocol (variance): simulate or run -> sample x_meas from the final
conditional state -> compute x_est from the record -> repeat -> bin by
x_est -> per-bin variance of x_meas -> count-weighted pooled average.
With a single bin the procedure returns the unconditional variance; with
enough bins it converges to the conditional one.  Two-point functions
use the same outcome set with two-dimensional binning per site pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InsufficientDataError
from .filters import CorrelatorTables, FilterKernel
from .gaussian import GaussianState1
from .lattice import GaussianLatticeState
from .records import MeasurementRecord, SeedSpec, convolve_record_info

MIN_BIN_COUNT = 10
BIN_HALF_WIDTH_SIGMAS = 4.0


@dataclass(frozen=True)
class TrajectoryOutcome:
    """Per-run pair of estimator and measured arrays (site-indexed)."""

    trajectory_index: int
    estimators: np.ndarray
    measured: np.ndarray
    t_obs: float

    def __post_init__(self):
        est = np.atleast_1d(np.asarray(self.estimators, dtype=float))
        meas = np.atleast_1d(np.asarray(self.measured, dtype=float))
        if est.shape != meas.shape:
            raise ValueError("estimator and measured arrays must share shape")
        if not (np.all(np.isfinite(est)) and np.all(np.isfinite(meas))):
            raise ValueError("outcome contains non-finite entries")
        object.__setattr__(self, "estimators", est)
        object.__setattr__(self, "measured", meas)


def sample_measurement(state, quadrature: str, seed: SeedSpec) -> np.ndarray:
    """One joint projective sample of all x (or all p) quadratures.

    The commuting quadratures of a Gaussian state are jointly normal with
    the state's means and the matching covariance block; the draw uses a
    Cholesky-type factorization and is a pure function of the seed.
    """
    if quadrature not in ("x", "p"):
        raise ValueError("quadrature must be 'x' or 'p'")
    rng = seed.rng()
    if isinstance(state, GaussianState1):
        mean = state.mean_x if quadrature == "x" else state.mean_p
        var = state.v_x if quadrature == "x" else state.v_p
        return np.array([mean + np.sqrt(var) * rng.standard_normal()])
    if isinstance(state, GaussianLatticeState):
        mean = state.X if quadrature == "x" else state.P
        cov = state.CX if quadrature == "x" else state.CP
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance block not positive definite") from exc
        return mean + chol @ rng.standard_normal(mean.size)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def compute_estimators(
    record: MeasurementRecord,
    kernel: FilterKernel,
    sites,
    t_obs: float,
) -> np.ndarray:
    """Estimated conditional means, one value per requested site.

    Applies the global 2 sqrt(G) prefactor on top of the stored kernel
    values (kernels are stored without it).
    """
    gamma = kernel.params.get("gamma", 1.0)
    pref = 2.0 * np.sqrt(gamma)
    sites = np.atleast_1d(np.asarray(sites, dtype=int))
    out = np.empty(sites.size)
    for i, site in enumerate(sites):
        val, _ = convolve_record_info(record, kernel, int(site), t_obs)
        out[i] = pref * val
    return out


@dataclass
class BinnedStats:
    """Per-bin counts and moments of measured values, 1D or 2D."""

    ndim: int
    edges: list
    counts: np.ndarray
    sums: np.ndarray
    sums2: np.ndarray
    sums_cross: np.ndarray | None = None
    excluded_fraction: float = 0.0
    min_count: int = MIN_BIN_COUNT

    def retained(self) -> np.ndarray:
        return self.counts >= self.min_count


def _bin_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    mu, sigma = values.mean(), values.std()
    if sigma == 0:
        sigma = 1.0
    return np.linspace(
        mu - BIN_HALF_WIDTH_SIGMAS * sigma, mu + BIN_HALF_WIDTH_SIGMAS * sigma,
        n_bins + 1,
    )


class VarianceRecovery(NamedTuple):
    pooled_variance: float
    standard_error: float
    per_bin_variance: np.ndarray
    stats: BinnedStats


def bin_and_recover_variance(
    outcomes: list[TrajectoryOutcome],
    site: int,
    n_bins: int,
    min_count: int = MIN_BIN_COUNT,
) -> VarianceRecovery:
    """Recover the conditional variance at one site by 1D binning.

    Bins span the estimator mean +- 4 standard deviations; bins holding
    fewer than ``min_count`` samples are excluded and their sample mass
    reported.  The pooled value is the count-weighted average of per-bin
    sample variances (n-1 denominator).
    """
    est = np.array([o.estimators[site] for o in outcomes])
    meas = np.array([o.measured[site] for o in outcomes])
    edges = _bin_edges(est, n_bins)
    idx = np.digitize(est, edges) - 1
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins).astype(float)
    sums = np.bincount(idx[inside], weights=meas[inside], minlength=n_bins)
    sums2 = np.bincount(idx[inside], weights=meas[inside] ** 2, minlength=n_bins)
    keep = counts >= min_count
    if not np.any(keep):
        raise InsufficientDataError("every bin is below the count threshold")
    n_k = counts[keep]
    mean_k = sums[keep] / n_k
    var_k = (sums2[keep] - n_k * mean_k**2) / (n_k - 1.0)
    weights = n_k / n_k.sum()
    pooled = float(np.sum(weights * var_k))
    # variance of a normal-sample variance is 2 sigma^4 / (n - 1)
    se = float(np.sqrt(np.sum(weights**2 * 2.0 * var_k**2 / (n_k - 1.0))))
    per_bin = np.full(n_bins, np.nan)
    per_bin[keep] = var_k
    stats = BinnedStats(
        ndim=1,
        edges=[edges],
        counts=counts,
        sums=sums,
        sums2=sums2,
        excluded_fraction=1.0 - counts[keep].sum() / len(outcomes),
        min_count=min_count,
    )
    return VarianceRecovery(pooled, se, per_bin, stats)


class CovarianceRecovery(NamedTuple):
    pooled_covariance: float
    standard_error: float
    stats: BinnedStats


def bin2d_and_recover_covariance(
    outcomes: list[TrajectoryOutcome],
    site_pair: tuple[int, int],
    n_bins: int,
    min_count: int = MIN_BIN_COUNT,
) -> CovarianceRecovery:
    """Recover one conditional covariance entry by 2D binning.

    Bins jointly by the two sites' estimators; per-bin sample covariance
    of the measured pair, pooled with count weights.  The same outcome
    set serves every site pair (re-binning only).  For a diagonal pair
    this reduces to the 1D variance recovery.
    """
    j, k = site_pair
    if j == k:
        rec = bin_and_recover_variance(outcomes, j, n_bins, min_count)
        return CovarianceRecovery(rec.pooled_variance, rec.standard_error, rec.stats)
    est_j = np.array([o.estimators[j] for o in outcomes])
    est_k = np.array([o.estimators[k] for o in outcomes])
    meas_j = np.array([o.measured[j] for o in outcomes])
    meas_k = np.array([o.measured[k] for o in outcomes])
    edges_j = _bin_edges(est_j, n_bins)
    edges_k = _bin_edges(est_k, n_bins)
    ij = np.digitize(est_j, edges_j) - 1
    ik = np.digitize(est_k, edges_k) - 1
    inside = (ij >= 0) & (ij < n_bins) & (ik >= 0) & (ik < n_bins)
    flat = ij[inside] * n_bins + ik[inside]
    n_cells = n_bins * n_bins
    counts = np.bincount(flat, minlength=n_cells).astype(float)
    s_j = np.bincount(flat, weights=meas_j[inside], minlength=n_cells)
    s_k = np.bincount(flat, weights=meas_k[inside], minlength=n_cells)
    s_jk = np.bincount(flat, weights=(meas_j * meas_k)[inside], minlength=n_cells)
    s_jj = np.bincount(flat, weights=(meas_j**2)[inside], minlength=n_cells)
    s_kk = np.bincount(flat, weights=(meas_k**2)[inside], minlength=n_cells)
    keep = counts >= min_count
    if not np.any(keep):
        raise InsufficientDataError("every bin is below the count threshold")
    n_c = counts[keep]
    mj = s_j[keep] / n_c
    mk = s_k[keep] / n_c
    cov_c = (s_jk[keep] - n_c * mj * mk) / (n_c - 1.0)
    var_j = (s_jj[keep] - n_c * mj**2) / (n_c - 1.0)
    var_k = (s_kk[keep] - n_c * mk**2) / (n_c - 1.0)
    weights = n_c / n_c.sum()
    pooled = float(np.sum(weights * cov_c))
    # var of a normal-sample covariance: (v_j v_k + cov^2)/(n - 1)
    se = float(
        np.sqrt(
            np.sum(weights**2 * (var_j * var_k + cov_c**2) / (n_c - 1.0))
        )
    )
    stats = BinnedStats(
        ndim=2,
        edges=[edges_j, edges_k],
        counts=counts.reshape(n_bins, n_bins),
        sums=np.stack([s_j, s_k]).reshape(2, n_bins, n_bins),
        sums2=np.stack([s_jj, s_kk]).reshape(2, n_bins, n_bins),
        sums_cross=s_jk.reshape(n_bins, n_bins),
        excluded_fraction=1.0 - counts[keep].sum() / len(outcomes),
        min_count=min_count,
    )
    return CovarianceRecovery(pooled, se, stats)


def recover_covariance_profile(
    outcomes: list[TrajectoryOutcome],
    separations,
    n_bins: int,
    base_site: int = 0,
    min_count: int = MIN_BIN_COUNT,
):
    """Recovered C(r) for each separation, reusing one outcome set.

    Returns arrays (values, standard errors) aligned with ``separations``.
    """
    vals, errs = [], []
    for r in separations:
        rec = bin2d_and_recover_covariance(
            outcomes, (base_site, base_site + int(r)), n_bins, min_count
        )
        vals.append(rec.pooled_covariance)
        errs.append(rec.standard_error)
    return np.array(vals), np.array(errs)


def spatial_average_correlators(
    record: MeasurementRecord,
    measured: np.ndarray,
    window_spacing: int,
    max_lag: float,
    t_start: float = 0.0,
    window_width: int = 1,
) -> CorrelatorTables:
    """Estimate S and g from ONE trajectory by spatial averaging.

    Treats sites spaced ``window_spacing`` apart (taking ``window_width``
    contiguous sites per window) as independent realizations; valid when
    windows are separated by several correlation lengths.  Convergence
    can be probed by doubling the spacing and comparing.
    """
    from .filters import empirical_correlators  # local to avoid cycle

    V = record.sites
    starts = np.arange(0, V - window_width + 1, window_spacing)
    if starts.size < 8:
        raise InsufficientDataError(
            f"only {starts.size} usable windows; need at least 8"
        )
    pseudo_records = []
    pseudo_meas = []
    for s in starts:
        for w in range(window_width):
            pseudo_records.append(
                MeasurementRecord(
                    grid=record.grid, increments=record.increments[s + w : s + w + 1]
                )
            )
            pseudo_meas.append(measured[s + w])
    return empirical_correlators(
        pseudo_records, np.array(pseudo_meas), max_lag, t_start=t_start
    )
