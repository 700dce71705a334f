"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CreditCurveError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CreditCurveError, ValueError):
    """An argument or record violates a documented precondition."""


class ValidationError(InvalidInputError):
    """Input data failed validation (bad rows, weights not summing to one, ...)."""


class ParseError(ValidationError):
    """A data file could not be parsed. Carries ``path`` and ``line`` when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class NumericalError(CreditCurveError, ArithmeticError):
    """Base class for numerical failures (exit code 2 in the CLI)."""


class SingularSystemError(NumericalError):
    """A GLS system could not be solved.

    ``matrix`` names the offending matrix: ``"covariance"`` or ``"design"``.
    """

    def __init__(self, matrix: str, detail: str = ""):
        self.matrix = matrix
        msg = f"singular system: {matrix} matrix"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NoFeasiblePointError(NumericalError):
    """Every grid point evaluated to +inf."""


class UnderIdentifiedError(NumericalError):
    """Fewer observations than the model needs."""

    def __init__(self, what: str, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(f"{what}: {available} observations available, {required} required")


class DomainError(NumericalError):
    """A quantity left its valid domain (non-positive discount factor, price, ...)."""


class NoFairPremiumError(NumericalError):
    """The CDS premium leg has zero value, so no fair premium exists."""


class GenerationError(NumericalError):
    """Synthetic data could not be generated (non-PD requested covariance)."""
