"""Typed errors shared by every epmbench package."""


class EpmbError(Exception):
    """Base class for all errors raised by epmbench."""


# File formats


class FormatError(EpmbError, ValueError):
    """A file or record does not follow its documented format."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """The file ends before the data announced by its header."""


class UnsortedEventsError(FormatError):
    """Event timestamps are not non-decreasing."""


class OutOfBoundsError(FormatError):
    """A pixel coordinate lies outside the sensor geometry."""


class InvalidPolarityError(FormatError):
    """A polarity is not +1 or -1."""


class NegativeTimestampError(FormatError):
    """A timestamp is negative."""


class NonMonotonicTimestampsError(FormatError):
    """Samples of a time series are not sorted by timestamp."""


class CsvFormatError(FormatError):
    """A CSV table has a wrong header, a non-numeric cell or an invalid value."""


class PgmFormatError(FormatError):
    """A PGM frame is not a 16-bit binary (P5, maxval 65535) image."""


class SidecarError(FormatError):
    """A JSON sidecar is missing, unreadable or lacks a required field."""


class SizeMismatchError(FormatError):
    """A payload does not match the size declared by its header or sidecar."""


class NonFiniteValueError(FormatError):
    """A value that must be finite is NaN or infinite."""


class ModelFormatError(FormatError):
    """A denoiser model container is malformed."""


class ManifestError(FormatError):
    """A dataset manifest references a missing file or disagrees with its files."""


# Domain


class EmptySequenceError(EpmbError, ValueError):
    """An operation needs at least one element."""


class GeometryMismatchError(EpmbError, ValueError):
    """Two objects that must share a sensor geometry do not."""


class WindowError(EpmbError, ValueError):
    """A time window is empty, negative or overlaps another window."""


class SimulationError(EpmbError):
    """The simulator cannot honour its accuracy contract."""


class MissingImuError(EpmbError):
    """No gyroscope samples fall inside an exposure window."""


class NoValidPixelsError(EpmbError):
    """No pixel is valid for the requested computation."""


class OutOfOrderEventError(EpmbError, ValueError):
    """An event is older than an event already replayed."""


class FeatureShapeError(EpmbError, ValueError):
    """Feature parameters do not describe a centred neighbourhood."""


class SingleClassError(EpmbError, ValueError):
    """A training set contains a single class."""


class MissingCalibrationError(EpmbError):
    """A dataset has no calibration result yet."""


class ConfigError(EpmbError, ValueError):
    """A configuration file or command line value is invalid."""
