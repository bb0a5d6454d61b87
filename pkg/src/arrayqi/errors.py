"""Exception and warning types shared across the package."""


class ArrayQIError(Exception):
    """Base class for all package errors."""


class ConfigError(ArrayQIError):
    """Invalid or unknown configuration entry."""


class NumericalError(ArrayQIError):
    """A numerical procedure failed or could not be trusted."""


class DomainError(NumericalError, ValueError):
    """Argument outside the domain where a formula is defined."""


class SingularMatrixError(NumericalError):
    """Linear system is singular to working precision."""


class FitError(NumericalError):
    """Resonance extraction failed."""


class ConvergenceError(NumericalError):
    """A sum or iteration did not reach the requested tolerance."""


class InstabilityError(NumericalError):
    """Step-halving audit of a time integration disagreed."""


class NumericalWarning(UserWarning):
    """Result is usable but close to a numerical edge case."""
