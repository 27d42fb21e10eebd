"""Exception hierarchy shared by every stage of the pipeline."""


class LumbarSegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LumbarSegError, ValueError):
    pass


class NumericError(LumbarSegError, ArithmeticError):
    """Non-finite values reached a place where they are not allowed."""


class FormatError(LumbarSegError, ValueError):
    """A file on disk does not follow the expected layout.

    ``offset`` is the byte offset of the offending content when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GeometryError(LumbarSegError, ValueError):
    pass


class ConfigError(LumbarSegError, ValueError):
    pass


class DataError(LumbarSegError, ValueError):
    pass


class TrainingError(LumbarSegError, RuntimeError):
    pass


class CheckpointError(LumbarSegError, ValueError):
    pass


class LocalizationError(LumbarSegError, RuntimeError):
    """No usable reference voxels or votes; the ROI cannot be predicted."""


class AggregationError(LocalizationError):
    pass


class EvaluationError(LumbarSegError, ValueError):
    pass
