"""Exception hierarchy.

Errors fall in three families that the command-line front end maps to
distinct exit codes: configuration problems, data problems and numeric
failures.
"""
from __future__ import annotations


class ChanShuffleError(Exception):
    """Base class for every error raised by this package."""

    #: name of the offending field or object, when known
    field: str | None = None

    def __init__(self, message: str, *, field: str | None = None):
        super().__init__(message)
        if field is not None:
            self.field = field


class ConfigError(ChanShuffleError, ValueError):
    pass


class DataError(ChanShuffleError):
    pass


class NumericError(ChanShuffleError, ArithmeticError):
    pass


class InvalidConfig(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class WidthMismatch(ConfigError):
    pass


class GridMismatch(ConfigError):
    pass


class UnknownBand(ConfigError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class ClassOutOfRange(DataError, ValueError):
    pass


class EmptyBatch(NumericError):
    """Every target position carries the ignore index."""


class NotScalar(NumericError, ValueError):
    pass


class NonFiniteLoss(NumericError):
    pass


class EmptyDataset(DataError):
    pass


class IOFailure(DataError, OSError):
    pass


class BadMagic(DataError):
    pass


class CorruptHeader(DataError):
    pass


class UnsupportedDtype(DataError):
    pass


class VersionMismatch(DataError):
    pass


class MissingTensor(DataError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""
