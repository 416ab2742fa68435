"""
Exception hierarchy for the contagion toolkit.
"""

from typing import Optional


class ContagionError(Exception):
    """Base class for all toolkit errors."""


class NetworkFormatError(ContagionError):
    """A network or panel file could not be parsed."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class ValidationError(ContagionError):
    """Input violates a model invariant."""


class IntegrationError(ContagionError):
    """The integrator produced a non-finite value."""

    def __init__(self, variable: str, t: float):
        self.variable = variable
        self.t = t
        super().__init__(f"non-finite value in '{variable}' at t={t:.6g}")


class CalibrationError(ContagionError):
    """A price panel cannot be used for estimation."""
