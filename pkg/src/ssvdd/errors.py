"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command line layer
can translate exceptions without a lookup table.
"""


class SsvddError(Exception):
    exit_code = 1


class ConfigurationError(SsvddError, ValueError):
    """Invalid hyperparameters or option combinations."""

    exit_code = 2


class DataError(SsvddError, ValueError):
    """Input data that cannot be used as given."""

    exit_code = 3


class MalformedInputError(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateSplitError(DataError):
    pass


class DegenerateFoldError(DataError):
    pass


class NoPositivesError(DataError):
    pass


class InfeasibleConstraintsError(ConfigurationError):
    pass


class DegenerateProjectionError(SsvddError, ArithmeticError):
    """Projection rows became linearly dependent."""

    exit_code = 4

    def __init__(self, message, dependent_rows=()):
        super().__init__(message)
        self.dependent_rows = tuple(dependent_rows)


class ConvergenceError(SsvddError, ArithmeticError):
    """Solver hit its iteration cap; carries the best iterate found."""

    exit_code = 4

    def __init__(self, message, alpha=None, kkt_residual=None):
        super().__init__(message)
        self.alpha = alpha
        self.kkt_residual = kkt_residual


class InternalConsistencyError(SsvddError, ArithmeticError):
    exit_code = 4
