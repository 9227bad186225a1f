"""
Errors - Exception taxonomy shared by every stage

The CLI maps each family onto a fixed exit code (see PIPELINE.md):
- ConfigurationError        -> 3
- DivergenceError/StepSize  -> 4
- OSError                   -> 5
"""

from typing import Any, Optional


EXIT_OK = 0
EXIT_CRITERIA_FAILED = 1
EXIT_CONFIG_ERROR = 3
EXIT_SOLVER_ERROR = 4
EXIT_IO_ERROR = 5


class RtNmpcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RtNmpcError, ValueError):
    """Invalid boxes, rates, schedules, file contents or override keys."""


class ShapeError(RtNmpcError, ValueError):
    """Array dimensions do not match the problem."""


class DomainError(RtNmpcError, ValueError):
    """Argument outside the domain of a formula."""


class DivergenceError(RtNmpcError, ArithmeticError):
    """A rollout, cost or gradient produced a non-finite value."""

    def __init__(self, message: str, step_index: Optional[int] = None):
        super().__init__(message)
        self.step_index = step_index


class StepSizeError(RtNmpcError, ArithmeticError):
    """Cost keeps growing under the configured step size."""

    def __init__(self, message: str, gamma: float):
        super().__init__(f"{message} (gamma={gamma:g}); try a smaller gamma")
        self.gamma = gamma


class NonConvexRegionError(RtNmpcError):
    """Sampled curvature estimate is not positive."""

    def __init__(self, message: str, estimates: Any):
        super().__init__(message)
        self.estimates = estimates


class SimulationAborted(RtNmpcError):
    """Closed-loop run stopped by a solver failure; keeps what was recorded."""

    def __init__(self, cause: Exception, partial_trace: Any):
        super().__init__(f"Simulation aborted at step {len(partial_trace)}: {cause}")
        self.cause = cause
        self.partial_trace = partial_trace


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, SimulationAborted):
        return exit_code_for(error.cause)
    if isinstance(error, (DivergenceError, StepSizeError)):
        return EXIT_SOLVER_ERROR
    if isinstance(error, (ConfigurationError, ShapeError, DomainError)):
        return EXIT_CONFIG_ERROR
    if isinstance(error, OSError):
        return EXIT_IO_ERROR
    return EXIT_SOLVER_ERROR
