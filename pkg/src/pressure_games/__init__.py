"""Evolutionary crowds under pressure from a principal: finite-N chains, kinetic limits and control."""

from .core import (ConfigError, DomainError, NumericalError, OccupationState, PayoffModel, PrincipalModel,
                   SimplexState)

__all__ = ["ConfigError", "DomainError", "NumericalError", "OccupationState", "PayoffModel",
           "PrincipalModel", "SimplexState"]
__version__ = "0.1.0"
