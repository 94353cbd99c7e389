"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class RegenSimError(Exception):
    """Base class for all library errors."""


class DomainError(RegenSimError, ValueError):
    """An argument lies outside the domain of an operation."""


class UnsupportedModelError(RegenSimError):
    """The requested quantity is not available for this model."""


class QuadratureError(RegenSimError):
    """A numerical integral failed to reach its tolerance."""


class SimulationDivergedError(RegenSimError):
    """A simulated path produced a non-finite state."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class DegenerateMinorizationError(RegenSimError):
    """The minorization constant is too small to be useful."""


class RejectionStallError(RegenSimError):
    """A rejection sampler accepted too few proposals."""


class NoCyclesError(RegenSimError):
    """No complete regeneration cycle was observed."""


class HorizonExhaustedError(RegenSimError):
    """Too many replicas failed to reach a stopping time within the horizon."""


class ConfigError(RegenSimError):
    """Configuration could not be parsed or validated.

    ``key`` names the offending dotted key when known and ``line`` the
    1-based line of a parse error.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
