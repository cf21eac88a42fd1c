"""Exception hierarchy shared across the package."""


class BikecastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BikecastError):
    """Invalid configuration value (bad interval, bad split span, ...)."""


class DataError(BikecastError):
    """Input data violates a documented precondition."""


class FormatError(DataError):
    """A required column or structural element is missing from an input file."""


class RowError(DataError):
    """A single data row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DomainError(BikecastError):
    """Argument outside its mathematical domain (inventory level, rate sign)."""


class TrainingError(BikecastError):
    """Model optimization failed (divergence, NaN loss)."""


class StageError(BikecastError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
