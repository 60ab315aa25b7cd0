"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """Argument outside the mathematical domain of a primitive."""


class NonFiniteError(ArithmeticError):
    """A computation produced inf or nan."""


class DegenerateInputError(ArithmeticError):
    """A denominator collapsed below the separation floor and could not be recovered."""


class DegenerateDerivativeError(DegenerateInputError):
    """The (fractional) derivative vanished at an approximation."""


class InsufficientDataError(ValueError):
    """Not enough admissible data points for an estimate."""


class CsvParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
