"""
Exception hierarchy for the phase-field damage simulator.
"""
from typing import Any, List, Optional


class PhaseFieldError(Exception):
    """Base class for all simulator errors."""


class GridError(PhaseFieldError, ValueError):
    """Invalid mesh description."""


class FieldShapeError(GridError):
    """A field does not live on the grid it is used with."""


class ConstraintViolation(PhaseFieldError, ValueError):
    """A state violates a pointwise constraint (simplex, damage box, rate sign)."""


class ModeError(PhaseFieldError, ValueError):
    """Operation called in a diffusion mode it is not defined for."""


class SolverError(PhaseFieldError, RuntimeError):
    """An iterative solver did not reach its tolerance.

    Args:
        message: Human readable description
        residual: Last residual reached
        iterations: Iterations spent
    """

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SimulationFailed(SolverError):
    """A time step failed; carries the trajectory computed so far."""

    def __init__(self, message: str, trajectory: Any, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message, residual, iterations)
        self.trajectory = trajectory


class ConfigError(PhaseFieldError, ValueError):
    """Configuration could not be parsed or violates model invariants.

    Args:
        message: Summary line
        violations: Every violated invariant, one entry each
        line: Line of a parse error (1-based), if any
        column: Column of a parse error (1-based), if any
    """

    def __init__(
        self,
        message: str,
        violations: Optional[List[str]] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.violations = list(violations or [])
        self.line = line
        self.column = column
        detail = message
        if line is not None:
            detail = f"{detail} (line {line}, column {column})"
        if self.violations:
            detail = detail + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(detail)
