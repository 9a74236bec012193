"""Exceptions raised by the toolkit.

Every error carries a plain message; the CLI maps the families below to exit codes.
"""


class OsatcomError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(OsatcomError, ValueError):
    """A parameter lies outside its domain (m <= 0, t1 > T, negative moments...)."""


class DimensionMismatchError(OsatcomError, ValueError):
    """Matrix operands do not share the expected M x M shape."""


class LengthMismatchError(OsatcomError, ValueError):
    """Chip block length does not match the spreading code length."""


class NotPSDError(OsatcomError, ValueError):
    """A matrix required to be positive semidefinite has a negative eigenvalue."""


class InfeasibleProblemError(OsatcomError):
    """No point satisfies the constraints (non-positive caps, conflicting pulse bounds)."""


class UnboundedInnerError(OsatcomError):
    """The Lagrangian inner problem has no finite maximizer for the given multipliers."""


class ConfigParseError(OsatcomError):
    """Experiment configuration could not be read or failed validation."""

    def __init__(self, message: str, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class CellSolveError(OsatcomError):
    """A per-cell solve failed inside a network solve."""

    def __init__(self, cell_index: int, cause: Exception):
        super().__init__(f"cell {cell_index}: {cause}")
        self.cell_index = cell_index
        self.cause = cause
