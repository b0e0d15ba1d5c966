"""Exception types raised across the package."""


class RastercastError(Exception):
    """Base class for all package errors."""


class ContractError(RastercastError, ValueError):
    """An argument violates a documented precondition."""


class RasterFormatError(RastercastError, ValueError):
    """An ASCII grid file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyVocabularyError(RastercastError, ValueError):
    """Every phrase was pruned from the vocabulary."""


class SolverError(RastercastError, RuntimeError):
    """An optimizer diverged."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class SamplingError(RastercastError, ValueError):
    """Not enough eligible cells to draw a balanced sample."""


class FoldError(RastercastError, ValueError):
    """Cross-validation folds could not be built."""


class GenerationError(RastercastError, ValueError):
    """A synthetic scenario cannot be generated as specified."""
