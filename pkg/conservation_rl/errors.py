"""Exception hierarchy for conservation_rl.

Command handlers in `app.py` map these onto process exit codes:
configuration problems exit with 1, simulation and training failures with 2.
"""

from __future__ import annotations


class ConservationRLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ConservationRLError, ValueError):
    """Invalid parameters, hyperparameters or run configuration."""


class ShapeError(ConservationRLError, ValueError):
    """Array dimensions do not line up."""


class CalibrationError(ConfigurationError):
    """The conservation dynamics admit no bistable regime."""


class StockSeriesError(ConfigurationError):
    """A stock-assessment CSV failed validation."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SimulationError(ConservationRLError, RuntimeError):
    """A rollout could not proceed (e.g. a non-finite action)."""

    def __init__(self, message: str, *, step: int | None = None, replicate: int | None = None):
        self.step = step
        self.replicate = replicate
        super().__init__(message)


class ConvergenceError(SimulationError):
    """Value iteration ran out of iterations."""

    def __init__(self, message: str, *, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class TrainingError(SimulationError):
    """A TD3 update produced a non-finite loss or otherwise failed."""

    def __init__(self, message: str, *, diagnostics: dict | None = None, curve=None):
        self.diagnostics = dict(diagnostics or {})
        # Partial learning curve, attached by `td3.train` when available.
        self.curve = curve
        super().__init__(message)


class BufferUnderflowError(TrainingError):
    """Sampling was requested from a replay buffer with too few items."""
