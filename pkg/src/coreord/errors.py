"""Exception taxonomy shared by all coreord modules."""


class CoreordError(Exception):
    """Base class for every error raised by this package."""


class InputError(CoreordError, ValueError):
    """Malformed caller input: shape mismatch, non-finite entries, bad range."""


class DegenerateBatchError(InputError):
    """Batch too small for the requested operation (no neighbors to normalize over)."""


class ConfigError(CoreordError, ValueError):
    """Invalid or inconsistent configuration (unknown keys, violated bounds)."""


class DivergenceOverflowError(CoreordError, ArithmeticError):
    """KL support mismatch: positive mass in the reference faces zero mass.

    With exp-based neighbor distributions every off-diagonal entry is
    strictly positive for finite inputs, so hitting this means a bug or
    hand-built inputs with mismatched supports.
    """


class OracleFailureError(CoreordError, RuntimeError):
    """Numerical oracle failed to converge within its iteration cap."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NonFiniteLossError(CoreordError, ArithmeticError):
    """Training produced a non-finite loss; carries the last good state."""

    def __init__(self, message: str, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history if history is not None else []


class DatasetIOError(CoreordError, OSError):
    """Dataset file unreadable or unparsable; message carries the line number."""


class UndefinedCorrelationError(CoreordError, ArithmeticError):
    """Correlation requested for a constant vector (zero variance)."""
