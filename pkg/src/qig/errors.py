"""Exception hierarchy shared by all qig modules."""


class QigError(Exception):
    """Base class for every error raised by qig."""


class InvalidInputError(QigError, ValueError):
    pass


class NotPSDError(InvalidInputError):
    pass


class ResourceLimitError(QigError):
    pass


class DomainError(InvalidInputError):
    pass


class ModelNotFoundError(QigError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "model not found"


class InconsistentTangentError(InvalidInputError):
    pass


class SingularMetricError(QigError):
    pass


class InvalidPOVMError(InvalidInputError):
    pass


class InvalidFrameError(InvalidInputError):
    pass


class InfeasibleError(QigError):
    pass


class UnsupportedArityError(InvalidInputError):
    pass


class PreconditionError(QigError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConvergenceError(QigError):
    """Raised when a minimization stops before meeting its tolerance.

    ``best_value`` is the objective at the last feasible iterate, which is
    still a valid upper estimate of the infimum.
    """

    def __init__(self, message, best_value=None, diagnostics=None):
        super().__init__(message)
        self.best_value = best_value
        self.diagnostics = diagnostics or {}


class SearchError(QigError):
    pass


class InitializationError(QigError):
    pass
