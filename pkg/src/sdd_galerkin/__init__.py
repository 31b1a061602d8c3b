"""Spectral-Galerkin simulation of reaction-diffusion equations with
state-dependent delay, with a finite-difference oracle and numerical
checks of dissipative a-priori bounds."""

__version__ = "0.1.0"

from .basis import DomainSpec, EigenBasis, build_basis, norm, project, synthesize
from .errors import (
    BlowupSuspected,
    ConfigError,
    OutOfWindowError,
    PreconditionError,
    SddError,
    SpecViolation,
)
from .history import HistorySegment
from .model import (
    DelaySpec,
    ForcingSpec,
    ForcingTerm,
    NonlinearitySpec,
    ProblemSpec,
    check_dissipation,
    check_growth,
    critical_exponents,
    eval_tau,
)
from .solver import SolverConfig, Trajectory, convergence_study, solve
from .fdm import compare, fdm_solve

__all__ = [
    "BlowupSuspected", "ConfigError", "DelaySpec", "DomainSpec", "EigenBasis", "ForcingSpec",
    "ForcingTerm", "HistorySegment", "NonlinearitySpec", "OutOfWindowError",
    "PreconditionError", "ProblemSpec", "SddError", "SolverConfig", "SpecViolation",
    "Trajectory", "build_basis", "check_dissipation", "check_growth", "compare",
    "convergence_study", "critical_exponents", "eval_tau", "fdm_solve", "norm", "project",
    "solve", "synthesize",
]
