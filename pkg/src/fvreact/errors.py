"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """An experiment configuration could not be parsed or validated."""


class NonConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance.

    Carries the iteration count and the last scaled residual so a failure
    can be diagnosed without re-running the solve.
    """

    def __init__(self, message: str, iterations: int | None = None,
                 residual: float | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class ConsistencyError(RuntimeError):
    """A computed state violates a structural guarantee of the scheme.

    Not a user error: if a converged solve produces, say, a negative
    concentration beyond the allowed numerical slack, the result must not
    be trusted and no amount of retrying will help.
    """
