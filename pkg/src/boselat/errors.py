"""Exception types shared across the package."""


class BoselatError(ValueError):
    """Base class for all domain errors raised by boselat."""


class UnsupportedParameterError(BoselatError):
    """Parameters outside the regime where a closed form or operation is defined."""


class GaplessParametersError(UnsupportedParameterError):
    """The dispersion touches zero somewhere in the Brillouin zone."""


class InstabilityError(BoselatError):
    """A deterministic integration step left the physical region (dt too large)."""


class InvalidWindowError(BoselatError):
    """An observation time falls outside the available record window."""


class TruncationHealthError(BoselatError):
    """Too much population in the top of the truncated number basis."""


class InsufficientDataError(BoselatError):
    """Not enough samples (or too ill-conditioned a system) to produce an estimate."""
