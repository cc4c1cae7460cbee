"""Exception hierarchy shared by all qfclt modules.

Exit-code mapping for the CLI: ValidationError -> 2, BudgetError and
CapExceededError -> 3.
"""


class QfcltError(Exception):
    """Base class for qfclt failures."""


class ValidationError(QfcltError, ValueError):
    """Rejected input: shape, symmetry, positivity, missing config keys."""


class BudgetError(QfcltError, RuntimeError):
    """A requested error tolerance could not be certified.

    Carries the best bound that was achieved so callers can inspect it.
    """

    def __init__(self, message, best_bound=None):
        super().__init__(message)
        self.best_bound = best_bound


class CapExceededError(QfcltError, RuntimeError):
    """An enumeration or table would exceed its size cap.

    ``estimate`` is the predicted size that triggered the refusal.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class QuadratureError(QfcltError, RuntimeError):
    """Adaptive quadrature failed to reach the requested panel tolerance."""
