"""Exception types shared across the package."""


class ThetaMilsteinError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ThetaMilsteinError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractViolationError(ThetaMilsteinError, ValueError):
    """A problem definition or call broke a structural contract (shapes, dims)."""


class MissingConstantError(ThetaMilsteinError):
    """A declared regularity constant required by a formula is absent."""


class GuardViolationError(ThetaMilsteinError):
    """A stepsize guard was violated under the strict guard policy."""


class NonConvergenceError(ThetaMilsteinError):
    """The implicit stage solver did not meet its tolerance.

    Carries the best residual norm seen and the number of iterations spent.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergenceError(ThetaMilsteinError):
    """A trajectory left the finite range (blow-up).

    ``step`` is the index of the increment whose update produced the
    non-finite state; ``partial_y`` holds the states computed before the
    blow-up when the integrator had them.
    """

    def __init__(self, message, step=None, partial_y=None):
        super().__init__(message)
        self.step = step
        self.partial_y = partial_y


class ReferenceFailureError(ThetaMilsteinError):
    """The reference trajectory for an error study could not be produced."""


class ConfigError(ThetaMilsteinError, ValueError):
    """Invalid experiment configuration (bad value, unknown key, bad file)."""
