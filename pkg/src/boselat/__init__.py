"""boselat: continuously monitored lattice bosons.

Trajectory simulation (Gaussian and truncated number basis), record
filtering into conditional-mean estimators, and binning/postselection
recovery of conditional variances and correlators.
"""

from .errors import (
    BoselatError,
    GaplessParametersError,
    InstabilityError,
    InsufficientDataError,
    InvalidWindowError,
    TruncationHealthError,
    UnsupportedParameterError,
)
from .records import (
    MeasurementRecord,
    SeedSpec,
    TimeGrid,
    convolve_record,
    convolve_record_info,
    generate_wiener,
    integrated_record,
    load_record,
    save_record,
)
from .gaussian import (
    GaussianState1,
    SingleSiteParams,
    simulate_trajectory_single,
    steady_state_single,
    unconditional_variance_single,
    vacuum_state,
)
from .lattice import (
    GaussianLatticeState,
    LatticeParams,
    correlation_length,
    correlator_profile,
    dispersion,
    simulate_trajectory_lattice,
    steady_state_lattice,
    vacuum_lattice_state,
)
from .fock import (
    FockOperators,
    FockState,
    factorized_evolution,
    gaussian_fixed_point,
    husimi,
    moments,
    propagate_record_driven,
    sse_step_pure,
)
from .filters import (
    CorrelatorTables,
    FilterKernel,
    analytic_filter_single,
    analytic_kernels_lattice,
    continuum_kernel_kp,
    design_filter_wiener_hopf,
    empirical_correlators,
    filter_ode_roots,
)
from .postselect import (
    BinnedStats,
    TrajectoryOutcome,
    bin2d_and_recover_covariance,
    bin_and_recover_variance,
    compute_estimators,
    sample_measurement,
)
from .config import ExperimentConfig, load_config
from .pipelines import reproduce_figure, run_pipeline

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
