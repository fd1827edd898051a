"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to distinct process statuses without a lookup table.
"""


class RankedListError(Exception):
    exit_code = 1


class UsageError(RankedListError):
    exit_code = 2


class ConfigurationError(RankedListError):
    """Inputs are individually valid but cannot be combined (e.g. a batch with one class)."""

    exit_code = 2


class ParameterError(ConfigurationError, ValueError):
    pass


class DataError(RankedListError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(DataError, ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


class PreconditionError(DataError):
    pass


class RangeError(RankedListError, ValueError):
    exit_code = 2


class EmptySetError(RankedListError, ValueError):
    exit_code = 4


class NumericalError(RankedListError, ArithmeticError):
    exit_code = 4


class DegenerateInputError(NumericalError):
    pass


class SingularPairError(NumericalError):
    pass


class NumericalInstabilityError(NumericalError):
    pass


class CheckFailure(RankedListError):
    exit_code = 5


class TrainingError(RankedListError):
    """Wraps a lower-level failure with the iteration it happened at."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
