from __future__ import annotations


class SimulationError(Exception):
    """
    Base class for errors raised by the simulator services.
    """


class InvalidStateError(SimulationError, ValueError):
    """
    A coefficient or state evaluation produced a non-finite value.
    """


class BlowUpError(SimulationError):
    """
    A time step produced a non-finite state.

    Carries the time of the failed step and the norm that was observed
    (inf when the state itself is not finite).
    """

    def __init__(self, message: str, time: float | None = None, norm: float = float("inf")) -> None:
        super().__init__(message)
        self.time = time
        self.norm = norm


class OutOfWindowError(SimulationError, ValueError):
    """
    A shift or frame change left the window covered by the grid.
    """


class RootNotFoundError(SimulationError):
    pass


class ContractError(SimulationError, ValueError):
    """
    An operation was called without the data it needs.
    """


class ExpressionError(SimulationError, ValueError):
    pass


class ConfigError(SimulationError):
    """
    Config file could not be parsed or failed validation.
    """
