"""Interior-point solver for block-diagonal semidefinite programs."""
from .kernels import BACKEND, HAVE_EXTENSION, ResourceLimitError
from .problem import ConicSolution, SdpBuilder, SdpProblem, SolverSettings
from .solver import check_solution, solve

__all__ = ["BACKEND", "HAVE_EXTENSION", "ConicSolution", "ResourceLimitError", "SdpBuilder",
           "SdpProblem", "SolverSettings", "check_solution", "solve"]
