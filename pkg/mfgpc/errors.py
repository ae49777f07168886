"""Exception hierarchy shared by every mfgpc module."""

from typing import Any, Optional


class MfgpcError(Exception):
    """Base class for all toolkit errors."""


class InputError(MfgpcError, ValueError):
    """Malformed or inconsistent inputs (shapes, labels, ranges)."""


class DatasetParseError(InputError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if path is not None else f"line {line}"
        super().__init__(f"{where}: {message}")


class NumericalError(MfgpcError, ArithmeticError):
    """A factorization failed even after the maximum jitter was added."""

    def __init__(self, message: str, **diagnostics: Any):
        self.diagnostics = diagnostics
        if diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class ConvergenceError(NumericalError):
    """Newton iterations did not reach the requested tolerance."""

    def __init__(self, message: str, last_iterate: Any = None, **diagnostics: Any):
        self.last_iterate = last_iterate
        super().__init__(message, **diagnostics)


class PreconditionError(MfgpcError):
    pass


class OptimizationError(MfgpcError):
    def __init__(self, message: str, restarts: Optional[list] = None):
        self.restarts = restarts or []
        super().__init__(message)


class GenerationError(MfgpcError):
    pass


class UndefinedMetricError(MfgpcError, ValueError):
    pass


class SamplerError(MfgpcError):
    pass


class FiniteDifferenceError(MfgpcError):
    def __init__(self, message: str, coordinate: int):
        self.coordinate = coordinate
        super().__init__(message)
