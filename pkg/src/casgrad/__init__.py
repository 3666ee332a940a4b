"""Curvature-aligned simplex gradients with a global-model curvature source."""

from .baselines import cd_estimate, cd_noise_error, fd_estimate, fd_sample_set, fd_steps
from .casg import CasgResult, casg_sample_set, get_sigma_star, hadamard
from .ecasg import ecasg_sample_set, subdivide
from .errors import (
    CasgError,
    ConfigError,
    DegenerateGeometry,
    EmptyRecordSet,
    NumericalError,
)
from .global_model import FilterPolicy, fit_rbf, framework_step
from .history import EvaluationHistory
from .simplex_core import (
    CurvatureSpec,
    SampleSet,
    approximation_error,
    noise_error,
    objective,
    simplex_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "CasgError",
    "CasgResult",
    "ConfigError",
    "CurvatureSpec",
    "DegenerateGeometry",
    "EmptyRecordSet",
    "EvaluationHistory",
    "FilterPolicy",
    "NumericalError",
    "SampleSet",
    "approximation_error",
    "casg_sample_set",
    "cd_estimate",
    "cd_noise_error",
    "ecasg_sample_set",
    "fd_estimate",
    "fd_sample_set",
    "fd_steps",
    "fit_rbf",
    "framework_step",
    "get_sigma_star",
    "hadamard",
    "noise_error",
    "objective",
    "simplex_gradient",
    "subdivide",
]
