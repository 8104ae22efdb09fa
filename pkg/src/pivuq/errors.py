"""Exception hierarchy shared across the package."""


class PivUqError(Exception):
    """Base class for all pivuq errors."""


class DimensionError(PivUqError):
    """Grid shapes disagree or are not valid 2-D grids."""


class ParameterError(PivUqError):
    """A configuration value or argument is out of its allowed range."""


class ConfigError(PivUqError):
    """A key-value config file is malformed or inconsistent."""


class FileFormatError(PivUqError):
    """A file does not conform to its on-disk format.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EstimationError(PivUqError):
    """Cross-correlation estimation could not produce a usable field."""


class EnsembleError(PivUqError):
    """Fewer than two ensemble members survived estimation."""


class NumericError(PivUqError):
    """A numeric computation produced non-finite intermediates."""


class TrainingDivergedError(PivUqError):
    """Training loss became non-finite or exceeded the divergence bound.

    Carries the loss history recorded up to the aborted step.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class DegenerateInputError(PivUqError):
    """Input carries no usable variation (constant ranks, zero mean error)."""
