"""Exception hierarchy shared across the package."""


class LupiNDPError(Exception):
    """Base class for all package errors."""


class DimensionError(LupiNDPError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(LupiNDPError, ValueError):
    """An argument lies outside the domain of an operation (log of a
    non-positive value, non-positive scale, empty reduction, ...)."""


class NonFiniteError(LupiNDPError, FloatingPointError):
    """A primitive produced NaN or Inf."""


class ContractError(LupiNDPError, RuntimeError):
    """A calling contract was violated (non-scalar loss, reused tape, ...)."""


class ConfigError(LupiNDPError, ValueError):
    """Invalid configuration value."""


class IntegrationError(LupiNDPError, RuntimeError):
    """The ODE solver hit a non-finite or invalid state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class TrainingError(LupiNDPError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class ParseError(LupiNDPError, ValueError):
    """A dataset, checkpoint or config file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
