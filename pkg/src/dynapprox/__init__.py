"""Stable nonlinear dynamical approximation of time-dependent PDEs.

Parameters of a nonlinear decoder evolve by tangent-space projection observed
through moving Gaussian windows whose locations continuously maximize an
inf-sup stability constant.
"""

__version__ = "0.1.0"

from .decoders import (
    ExponentialMixtureDecoder,
    GaussianMixtureDecoder,
    LinearDecoder,
    PolynomialDecoder,
    TanhMLPDecoder,
    fit_initial,
)
from .fields import CallableField, GaussPolyField
from .integrator import MetricConfig, RunConfig, Runner, SamplerConfig
from .kernels import GaussianKernel, gaussian_eval, gaussian_l2_inner, gaussian_poly_inner
from .models import AllenCahn, Burgers, FokkerPlanck, KdV, Transport
from .observations import ObservationSet
from .projection import ZNormSpec, assemble_system, continuous_gramian, solve_theta_dot
from .stability import beta_report, error_constants, grad_beta_sq

__all__ = [
    "AllenCahn",
    "Burgers",
    "CallableField",
    "ExponentialMixtureDecoder",
    "FokkerPlanck",
    "GaussPolyField",
    "GaussianKernel",
    "GaussianMixtureDecoder",
    "KdV",
    "LinearDecoder",
    "MetricConfig",
    "ObservationSet",
    "PolynomialDecoder",
    "RunConfig",
    "Runner",
    "SamplerConfig",
    "TanhMLPDecoder",
    "Transport",
    "ZNormSpec",
    "assemble_system",
    "beta_report",
    "continuous_gramian",
    "error_constants",
    "fit_initial",
    "gaussian_eval",
    "gaussian_l2_inner",
    "gaussian_poly_inner",
    "grad_beta_sq",
    "solve_theta_dot",
]
