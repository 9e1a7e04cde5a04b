"""Exception hierarchy shared by all modules."""


class CylMagError(Exception):
    """Base class for every error raised by :mod:`cylmag`."""


class AxisPoint(CylMagError, ValueError):
    """A point lies on (or too close to) the symmetry axis r = 0."""


class ChartMismatch(CylMagError, ValueError):
    """Component data tagged with the wrong chart or tensor kind."""


class InvalidParams(CylMagError, ValueError):
    """Catalog or solver parameters outside their admissible range."""


class MissingBetaSolution(CylMagError):
    """A beta-dependent system was requested without a beta solution."""


class GaugeInconsistency(CylMagError):
    """A constructed gauge potential does not reproduce the field (dB != 0)."""


class DomainError(CylMagError, ValueError):
    """Evaluation outside the domain on which an oracle is defined."""


class BetaVanishing(CylMagError):
    """The numeric beta solution dropped below the vanishing threshold.

    The truncated solution is kept on ``solution`` so callers can still use
    the part of the domain that was integrated.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class StepFailure(CylMagError):
    """An ODE solver failed to meet its tolerance."""


class AxisApproach(CylMagError):
    """A trajectory came closer to the axis than the exclusion radius."""


class OrderOverflow(CylMagError):
    """Operator composition would exceed the supported order."""


class DegenerateFit(CylMagError):
    """Residuals are at the noise floor, so no power law can be fitted."""
