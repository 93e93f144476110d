"""Exception types raised across the toolkit."""


class EvaluationError(ValueError):
    """A right-hand side was handed (or produced) a non-finite value."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class IntegrityError(RuntimeError):
    """A state component went negative beyond the clamp tolerance."""


class IntegrationError(RuntimeError):
    """The integrator gave up before reaching the end of the span."""

    def __init__(self, message, last_t=None):
        super().__init__(message)
        self.last_t = last_t


class CalibrationError(RuntimeError):
    """No multistart run converged; ``best`` holds the best iterate seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class MeasurementError(ValueError):
    """Malformed or invalid row in a measurement file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
