"""Exception types shared across the package."""


class OrderedAEError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(OrderedAEError):
    """An operation received arguments that violate its preconditions."""


class NumericalError(OrderedAEError):
    """A numerical routine produced non-finite values or failed internally."""


class NoConvergenceError(NumericalError):
    """A nonlinear solve stalled before reaching its residual tolerance.

    Carries the best iterate seen so callers can inspect or reuse it.
    """

    def __init__(self, message, best_x=None, best_residual_norm=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_residual_norm = best_residual_norm


class DataError(OrderedAEError):
    """Problems with datasets or their on-disk representations."""


class CsvParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateVariableError(DataError):
    """A variable has zero sample variance and cannot be standardized."""


class TrainingError(OrderedAEError):
    """Model training failed on every restart."""


class ExtractionError(OrderedAEError):
    """A relation cannot be built from the given training outcome."""


class TrivialSolutionError(ExtractionError):
    """The trained map collapsed (zero residual weights), encoding no relation."""


class NothingToExtractError(ExtractionError):
    """No latent variable fell below the variance tolerance."""


class UsageError(OrderedAEError):
    """Invalid command-line arguments or configuration."""
