"""Diffusive molecular-communication SISO channel toolkit.

Closed-form reception model with angular and exponent corrections, a
Brownian-motion particle simulator, PSO parameter fitting, Poisson
maximum-likelihood estimation of channel parameters with CRLB
benchmarks, and a CLI that reproduces the result tables and figures.
"""

__version__ = "0.1.0"

from .channel import (
    ChannelGeometry,
    CorrectionParams,
    CumulativeHitCurve,
    IDEAL_PARAMS,
    f_corrected,
    f_corrected_batch,
    f_ideal,
    impulse_response,
    omega,
    param_partials,
    u_denominator,
    x_of_beta,
)
from .config import ExperimentConfig, load_config
from .errors import (
    ConfigurationError,
    DegenerateGridError,
    DomainError,
    FitFailureError,
    IllPosedGridError,
    McChannelError,
    NumericalInstabilityError,
    SimulationFaultError,
)
from .estimate import (
    EstimationResult,
    FisherInfo,
    estimate_D,
    estimate_d,
    estimate_joint,
    fisher_crlb,
    log_likelihood,
    slot_means,
)
from .pso import FitResult, PsoConfig, fit, loss
from .simulate import ObservationSet, SimulationConfig, observe_increments, simulate
from .special import ERFC_COEFFS, ErfcCoefficients, erfc_approx, erfc_approx_derivative, erfc_exact, expint_ei

__all__ = [
    "__version__",
    "ChannelGeometry",
    "CorrectionParams",
    "CumulativeHitCurve",
    "IDEAL_PARAMS",
    "f_corrected",
    "f_corrected_batch",
    "f_ideal",
    "impulse_response",
    "omega",
    "param_partials",
    "u_denominator",
    "x_of_beta",
    "ExperimentConfig",
    "load_config",
    "McChannelError",
    "DomainError",
    "ConfigurationError",
    "DegenerateGridError",
    "IllPosedGridError",
    "NumericalInstabilityError",
    "FitFailureError",
    "SimulationFaultError",
    "EstimationResult",
    "FisherInfo",
    "estimate_d",
    "estimate_D",
    "estimate_joint",
    "fisher_crlb",
    "log_likelihood",
    "slot_means",
    "FitResult",
    "PsoConfig",
    "fit",
    "loss",
    "ObservationSet",
    "SimulationConfig",
    "observe_increments",
    "simulate",
    "ERFC_COEFFS",
    "ErfcCoefficients",
    "erfc_approx",
    "erfc_approx_derivative",
    "erfc_exact",
    "expint_ei",
]
