"""Exception hierarchy shared across the toolkit.

CLI exit codes map onto these: usage errors exit 1, DataError (and
subclasses) exit 2, NumericError exit 3.
"""


class FerError(Exception):
    """Base class for all toolkit errors."""


class DataError(FerError):
    """Malformed or unloadable input data (CSV rows, images, spec files)."""


class WeightsFormatError(DataError):
    """Weights file cannot be parsed into a model."""


class BadMagicError(WeightsFormatError):
    """File does not start with the weights-file magic string."""


class TruncatedWeightsError(WeightsFormatError):
    """File ends before the declared payload is complete."""


class ShapeMismatchError(WeightsFormatError):
    """Stored tensor names/shapes do not match the declared architecture."""


class NumericError(FerError):
    """Non-finite loss or gradient encountered during training."""
