"""Exception hierarchy shared by every stage of the pipeline."""


class StanError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(StanError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes are incompatible."""


class InputTooShortError(ShapeError):
    """A signal or map is smaller than the kernel that must slide over it."""


class NonFiniteError(StanError, ArithmeticError):
    """A forward op produced NaN or Inf from finite inputs."""


class FrozenModelError(ContractError):
    """An update was attempted on parameters that have been frozen."""


class ConfigError(StanError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class ParseError(StanError, ValueError):
    """A file could not be parsed; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(ParseError):
    pass


class ValidationError(StanError, ValueError):
    """Parsed data is well-formed but semantically inconsistent."""


class DataInsufficiencyError(StanError):
    """Not enough labelled data to build a training set."""


class SpanTruncationError(StanError):
    """A monitoring span reaches outside the recording."""


class InsufficientFoldsError(StanError):
    """Fewer seizures than leave-one-out cross-validation needs."""


class UndefinedMetricError(StanError, ArithmeticError):
    """A metric has no defined value, e.g. a rate over zero hours."""


class TrainingDivergedError(StanError, RuntimeError):
    """Training produced NaN losses or tripped a stability guard."""
