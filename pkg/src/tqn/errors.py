"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UsageError(RuntimeError):
    """An operation was called in a state where it is not allowed."""


class TrainingError(RuntimeError):
    """Training produced non-finite values and cannot continue."""
