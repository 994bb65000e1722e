"""Exception hierarchy shared by every module."""


class LDRKError(Exception):
    """Base class for all library errors."""


class DegenerateInput(LDRKError, ValueError):
    """Input is well-formed but degenerate (zero samples, zero vectors, k = 0)."""


class InvalidMatrix(LDRKError, ValueError):
    """Matrix has non-finite entries or a factorization failed."""


class ShapeError(LDRKError, ValueError):
    """Operand shapes are inconsistent."""


class DivergenceError(LDRKError, RuntimeError):
    """An iterative procedure produced a non-finite objective.

    ``last_good`` carries the most recent finite state, when one exists.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ConfigError(LDRKError, ValueError):
    """Configuration document is malformed or violates the schema."""
