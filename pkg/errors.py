#!/usr/bin/env python3
"""
errors.py - Exception Hierarchy

WHY THIS SCRIPT EXISTS:
- Gives every module one family of errors to raise and the CLI one family to catch
- Carries the context a caller needs to react (the offending k, sensor, position)
- Each class also derives from the nearest builtin so generic handlers keep working
"""

from typing import Any, Dict, Optional


class DlmError(Exception):
    """Base class for every error raised by the forecasting library."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used by the CLI on stderr."""
        payload: Dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        payload.update(self.context)
        return payload


class ParameterError(DlmError, ValueError):
    """Invalid hyper-parameter or argument value."""


class DimensionError(DlmError, ValueError):
    """Shapes of data, model, grid or layout disagree."""


class DataError(DlmError, ValueError):
    """Speeds that are non-finite, non-positive, or rows that do not parse."""

    def __init__(self, message: str, line: Optional[int] = None, **context: Any):
        if line is not None:
            context["line"] = line
        super().__init__(message, **context)
        self.line = line


class UnknownSensorError(DataError):
    """A sensor id in the speed file is missing from the layout file."""

    def __init__(self, sensor_id: str, line: Optional[int] = None):
        super().__init__(f"Sensor '{sensor_id}' not found in layout", line=line, sensor_id=sensor_id)
        self.sensor_id = sensor_id


class IndexRangeError(DlmError, IndexError):
    """Time index or horizon falls outside the grid."""


class RankDeficiencyError(DlmError, ArithmeticError):
    """Normal equations are singular and no regularization was requested."""

    def __init__(self, message: str, k: int):
        super().__init__(message, k=k)
        self.k = k


class UnstableSpecError(DlmError, ValueError):
    """Synthetic trajectories left the sanity band."""


class ExtentError(DlmError, ValueError):
    """A velocity field was queried outside its (t, x) extent."""

    def __init__(self, message: str, t: float, x: float):
        super().__init__(message, t=t, x=x)
        self.t = t
        self.x = x


class HorizonExceededError(DlmError):
    """The trajectory ran past the last time of the field before arriving."""

    def __init__(self, message: str, distance_covered: float, elapsed_minutes: float):
        super().__init__(message, distance_covered=distance_covered, elapsed_minutes=elapsed_minutes)
        self.distance_covered = distance_covered
        self.elapsed_minutes = elapsed_minutes


class ModelFormatError(DlmError):
    """Model file is not a model file, or it is truncated."""


class ChecksumError(ModelFormatError):
    """Model file content does not match its stored digest."""


class VersionError(ModelFormatError):
    """Model file was written by an incompatible format version."""


class ConfigError(DlmError, ValueError):
    """Configuration file could not be read."""
