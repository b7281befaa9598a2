"""Optimal power management of reconfigurable battery packs via ensemble Kalman inversion."""

from .cell import CellParameters, CellState, PackParameters
from .enki import EnkiConfig, ThetaEstimate, solve
from .errors import BessOpmError, ConfigError, DomainError, ModelError, SimulationFault, SolverError
from .policy import PolicyParameters, features, psr
from .problem import OpmConfig, mhe_cost, rollout

__version__ = "0.1.0"
