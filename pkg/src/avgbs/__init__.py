"""Coefficient-averaging engine for time-dependent multifactor Black-Scholes
problems with knock-out barriers, plus the verification harness that confirms
the averaging equivalence numerically against independent oracles."""

from avgbs.schedules import (
    AveragedCoefficients,
    CoefficientSchedule,
    EllipticityError,
    MarketModel,
    Segment,
    average_correlation,
    average_scalar,
    average_vol,
    averaged_operator_coeffs,
    check_uniform_ellipticity,
    integrate_product,
)

__all__ = [
    "AveragedCoefficients",
    "CoefficientSchedule",
    "EllipticityError",
    "MarketModel",
    "Segment",
    "average_correlation",
    "average_scalar",
    "average_vol",
    "averaged_operator_coeffs",
    "check_uniform_ellipticity",
    "integrate_product",
]
