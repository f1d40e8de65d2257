"""Exception hierarchy shared by all modules.

The CLI maps each family onto an exit code: configuration and hypothesis
violations exit with 2, numerical failures with 3, resolution refusals with 4.
"""


class BubblekitError(Exception):
    exit_code = 3


class ConfigError(BubblekitError, ValueError):
    exit_code = 2


class HypothesisError(BubblekitError, ValueError):
    """A configuration violates a standing hypothesis (distinct points, distance to vortices...)."""
    exit_code = 2


class DomainError(HypothesisError):
    pass


class SingularEvaluationError(BubblekitError, ValueError):
    exit_code = 3


class NumericalError(BubblekitError, RuntimeError):
    exit_code = 3


class ConvergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class ContinuationError(NumericalError):
    """Raised when a continuation step fails after bisection; carries the good records."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


class ResolutionError(BubblekitError):
    exit_code = 4


class ConditioningError(NumericalError):
    """Least-squares design matrix too ill-conditioned to separate the basis terms."""
