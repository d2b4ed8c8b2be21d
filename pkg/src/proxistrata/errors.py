"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so estimation code should raise the most
specific class that applies rather than bare ValueError.
"""


class ProxistrataError(Exception):
    """Base class for all package errors."""


class DomainError(ProxistrataError, ValueError):
    """A numerical primitive was called outside its domain."""


class ConfigError(ProxistrataError, ValueError):
    """An invalid configuration value (quadrature order, DGP constraint, ...)."""


class NumericError(ProxistrataError, ArithmeticError):
    """Non-finite values encountered during a numerical routine."""

    def __init__(self, message, params=None, coordinate=None):
        super().__init__(message)
        self.params = params
        self.coordinate = coordinate


class DataValidationError(ProxistrataError, ValueError):
    """Input data violates the observed-data schema.

    ``violations`` is a list of (rule, detail) pairs; ``detail`` names rows
    where that makes sense.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{rule}: {detail}" for rule, detail in self.violations))


class EstimationError(ProxistrataError, RuntimeError):
    """A fitting step failed (non-convergence, separation, degenerate cell...)."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"[{step}] {message}")
        self.step = step


class StudyError(ProxistrataError, RuntimeError):
    """A simulation study or oracle computation failed."""
