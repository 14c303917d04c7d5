"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
TrainingDivergenceError -> 3.
"""


class StylecastError(Exception):
    """Base class for all package errors."""


class ConfigError(StylecastError):
    """Invalid configuration. Message starts with the offending field path."""


class DataError(StylecastError):
    """Corpus ingestion or data-format problem."""


class IngestionError(DataError):
    """A manifest entry could not be loaded; message names the pair_id."""


class DegenerateAlignmentError(DataError):
    """A word has an empty frame span, so no alignment column can be built."""


class ShapeError(StylecastError, ValueError):
    """Tensor or matrix dimensions do not match an operation's contract."""


class NumericalError(StylecastError):
    """Non-finite values where finite ones are required."""


class TrainingDivergenceError(StylecastError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
