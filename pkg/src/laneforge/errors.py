"""Exception hierarchy shared by every pipeline stage.

The CLI maps failures to exit codes through ``exit_code``:
1 usage/config, 2 data/validation, 3 io.
"""

from __future__ import annotations


class LaneforgeError(Exception):
    exit_code = 2


class UsageError(LaneforgeError):
    exit_code = 1


class DataError(LaneforgeError):
    exit_code = 2


class IOFailure(LaneforgeError):
    exit_code = 3


class ConfigError(UsageError):
    pass


# geodesy

class InvalidCoordinateError(DataError):
    pass


class ConvergenceError(DataError):
    """Iterative datum inversion failed to settle; carries the last iterate."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


class ProjectionRangeError(DataError):
    pass


# svcrawl

class PanoNotFoundError(DataError):
    pass


class TransientIOError(IOFailure):
    """Retryable provider failure (timeouts, truncated responses)."""


class MalformedResponseError(DataError):
    pass


class EmptyCrawlError(DataError):
    pass


class SchemaVersionError(DataError):
    pass


class DatumMismatchError(DataError):
    pass


# file formats

class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.line = line
        self.offset = offset


# lane geometry

class InsufficientPointsError(DataError):
    pass


class DegenerateFitError(DataError):
    pass


class InsufficientNeighborsError(DataError):
    pass


class OutOfFrameError(DataError):
    pass


class PairingError(DataError):
    pass


# basemap

class DanglingRefError(DataError):
    pass


# matching / netgen

class EmptyPolylineError(DataError):
    pass


class GeometryError(DataError):
    pass


class ExportError(DataError):
    pass
