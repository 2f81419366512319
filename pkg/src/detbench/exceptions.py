"""Exception hierarchy shared across detbench modules."""


class DetbenchError(Exception):
    """Base class for all detbench errors."""


class DataError(DetbenchError, ValueError):
    """Raised for malformed or inconsistent input data (CLI exit code 2)."""


class ConfigError(DetbenchError, ValueError):
    """Raised for invalid run configuration (CLI exit code 3)."""


class MalformedLine(DataError):
    pass


class OutOfRange(DataError):
    pass


class UnknownClass(DataError):
    pass


class MissingFile(DataError, FileNotFoundError):
    pass


class DecodeError(DataError):
    pass


class BadRatios(ConfigError):
    pass


class MissingConfidence(DataError):
    pass


class EmptyListError(DetbenchError, ValueError):
    pass


class DegenerateTransform(DetbenchError, ValueError):
    pass


class WrongArity(DetbenchError, ValueError):
    pass


class EpochOutOfRange(DetbenchError, ValueError):
    pass


class LengthMismatch(DetbenchError, ValueError):
    pass


class NonMonotoneEpoch(DetbenchError, ValueError):
    pass


class ChannelMismatch(DetbenchError, ValueError):
    pass


class OddChannels(DetbenchError, ValueError):
    pass


class TooSmall(DetbenchError, ValueError):
    pass


class ShapeMismatch(DetbenchError, ValueError):
    pass


class TooFewSamples(DetbenchError, ValueError):
    pass


class NoSupportWarning(UserWarning):
    """Emitted when a recall is requested for a class with no ground truth."""
