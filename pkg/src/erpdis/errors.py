"""Exception hierarchy.

Each top-level class maps to one CLI exit code, so callers can tell a bad
command line from bad data, a broken evaluation protocol, or a numerical
blow-up without parsing messages.
"""

from __future__ import annotations


class ErpError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(ErpError):
    exit_code = 2


class DataError(ErpError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ProtocolError(ErpError):
    """The evaluation protocol cannot be applied to the given data."""

    exit_code = 4


class NumericalError(ErpError):
    exit_code = 5


class ConfigError(ErpError):
    """Invalid configuration, missing models, or an empty training set."""

    exit_code = 6


class DomainError(DataError, ValueError):
    pass


class SliceError(DataError, IndexError):
    def __init__(self, start: int, length: int, available: int):
        self.start = start
        self.length = length
        self.available = available
        super().__init__(
            f"slice [{start}, {start + length}) outside available extent [0, {available})"
        )


class DecodeError(DataError):
    """A container or weight file could not be decoded."""


class BadMagicError(DecodeError):
    pass


class VersionMismatchError(DecodeError):
    pass


class TruncatedPayloadError(DecodeError):
    pass


class SampleCountMismatchError(DecodeError):
    pass


class ShapeError(DataError, ValueError):
    pass


class SegmentationError(DataError):
    pass


class MalformedTrialError(SegmentationError):
    def __init__(self, trial_index: int, message: str):
        self.trial_index = trial_index
        super().__init__(f"trial {trial_index}: {message}")


class CadenceError(SegmentationError):
    pass


class WindowingError(SegmentationError):
    pass


class LabelingError(DataError):
    pass


class EmptyTrainingSetError(ConfigError):
    pass


class RoutingError(ConfigError):
    pass


class AggregationError(DataError):
    pass


class PathError(DataError, OSError):
    pass
