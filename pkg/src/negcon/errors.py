"""Exception hierarchy.

The CLI maps each family onto a distinct exit status, so every error raised
by the library derives from :class:`NegconError`.
"""


class NegconError(Exception):
    """Base class for all library errors."""

    exit_code = 5


class InvalidArgumentError(NegconError, ValueError):
    exit_code = 2


class ConfigError(NegconError, ValueError):
    exit_code = 2


class IngestionError(NegconError):
    """Bad input data. Carries the offending row and column when known."""

    exit_code = 3

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(IngestionError):
    pass


class TruncationViolationError(IngestionError):
    """A dyad with r1 = r2 = 0 was supplied; such dyads are never observed."""


class ConvergenceError(NegconError):
    exit_code = 4


class DivergenceError(ConvergenceError):
    """Likelihood is unbounded along some parameter direction."""

    def __init__(self, message, directions=()):
        super().__init__(message)
        self.directions = tuple(directions)


class NumericalError(NegconError):
    exit_code = 5


class CollinearityError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class EmptyStratumError(NumericalError):
    pass


class InsufficientDataError(NumericalError):
    pass


class DegenerateResponseError(NumericalError):
    pass


class SingularCovarianceError(NumericalError):
    pass


class SingularBreadError(NumericalError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class PrecisionError(NumericalError):
    pass
