"""Continuous-time mutual information for informative forecasting."""
from .core import DivergenceError, NotPositiveDefiniteError, NumericalConsistencyError, TimeGrid
from .system import LinearGaussianSystem, MatrixPolynomial, SensingModel, SensingSegment, VerificationSpec
from .chain import build_chain
from .smoother import p0_given, p0_given_point, p0_given_window
from .mi import (
    FlowState,
    InfoReport,
    info_rate,
    mi_pointwise_filter,
    mi_pointwise_smoother,
    mi_windowed,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "NotPositiveDefiniteError", "NumericalConsistencyError", "TimeGrid",
    "LinearGaussianSystem", "MatrixPolynomial", "SensingModel", "SensingSegment",
    "VerificationSpec", "build_chain", "p0_given", "p0_given_point", "p0_given_window",
    "FlowState", "InfoReport", "info_rate", "mi_pointwise_filter", "mi_pointwise_smoother",
    "mi_windowed",
]
