"""Exception hierarchy shared across the package."""


class TwinBeamError(Exception):
    """Base class for all package-specific errors."""


class TruncationError(TwinBeamError):
    """A truncated distribution leaves more tail mass than the tolerance allows."""


class NumericalInstabilityError(TwinBeamError):
    """A floating-point evaluation lost too much precision to be trusted."""


class ZeroConditionError(TwinBeamError):
    """Conditioning on an event whose probability underflows to zero."""


class VacuumError(TwinBeamError):
    """A statistic is undefined for a field with zero mean photon number."""


class MomentOrderError(TwinBeamError):
    """A required moment order is not available in the given moment set."""


class DegenerateHistogramError(TwinBeamError):
    """A histogram carries too little structure for the requested estimate."""


class HistogramFormatError(TwinBeamError):
    """A histogram file violates the expected format."""
