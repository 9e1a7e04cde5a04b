"""Integrable charged-particle systems with cylindrical-type integrals.

Classical and quantum verification of second-order integrals of motion for
a particle in static magnetic and electric fields whose integrals have
leading terms (p_phi^A)^2 and (p_Z^A)^2.
"""
from .errors import (AxisApproach, AxisPoint, BetaVanishing, ChartMismatch, CylMagError, DegenerateFit,
                     DomainError, GaugeInconsistency, InvalidParams, MissingBetaSolution, OrderOverflow,
                     StepFailure)

__version__ = "0.1.0"

__all__ = [
    "AxisApproach", "AxisPoint", "BetaVanishing", "ChartMismatch", "CylMagError", "DegenerateFit",
    "DomainError", "GaugeInconsistency", "InvalidParams", "MissingBetaSolution", "OrderOverflow",
    "StepFailure", "__version__",
]
