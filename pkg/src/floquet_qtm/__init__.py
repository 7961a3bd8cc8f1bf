"""Periodic steady states, exact gradients and power optimization for driven GKSL machines."""
__version__ = "0.1.0"

from .controls import ClampFunction, ControlProtocol, spectral_penalty
from .errors import (ConfigError, DegenerateNESS, FloquetQTMError, IllConditionedSolve,
                     InvalidArgument, ModelEvaluationError, NonConvergence, OptimizationFailed,
                     UndefinedMerit)
from .liouville import LindbladModel, assemble_lindbladian, tls_preset
from .observables import EnergyLedger, MeritDefinition, cycle_averages
from .optimizer import OptimizerSettings, maximize, multistart
from .problem import Evaluation, ThermalMachineProblem
from .spectral import HarmonicGrid, solve_ness

__all__ = [
    "ClampFunction", "ConfigError", "ControlProtocol", "DegenerateNESS", "EnergyLedger",
    "Evaluation", "FloquetQTMError", "HarmonicGrid", "IllConditionedSolve", "InvalidArgument",
    "LindbladModel", "MeritDefinition", "ModelEvaluationError", "NonConvergence",
    "OptimizationFailed", "OptimizerSettings", "ThermalMachineProblem", "UndefinedMerit",
    "assemble_lindbladian", "cycle_averages", "maximize", "multistart", "solve_ness",
    "spectral_penalty", "tls_preset",
]
