"""Exception types shared across the pipeline."""


class ThetaError(Exception):
    """Base class for all pipeline errors."""


class RangeError(ThetaError, ValueError):
    """A numeric value fell outside its documented range."""


class ArgumentError(ThetaError, ValueError):
    """An argument violated a precondition."""


class ParseError(ThetaError, ValueError):
    """A structured input (CSV, manifest) failed to parse."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class DegenerateGeometryError(ThetaError, ValueError):
    """Geometry too degenerate to compute an angle from."""


class ShapeError(ThetaError, ValueError):
    """Tensor shape mismatch; message names expected vs got."""


class LabelError(ThetaError, ValueError):
    """A class label fell outside the valid bin range."""


class DegenerateDataError(ThetaError, ValueError):
    """Data insufficient for the requested statistic (e.g. empty histogram row)."""


class DataError(ThetaError, ValueError):
    """Dataset unusable (empty split, empty eval set, ...)."""


class SyncError(ThetaError, ValueError):
    """Frame triplet violated the synchronization window."""


class StreamError(ThetaError, RuntimeError):
    """A frame stream misbehaved (non-monotone timestamps, starvation)."""


class CheckpointFormatError(ThetaError, ValueError):
    """Checkpoint file rejected: bad magic, truncated, or shape mismatch."""


class ConfigError(ThetaError, ValueError):
    """Pipeline configuration invalid (unknown key, bad value)."""
