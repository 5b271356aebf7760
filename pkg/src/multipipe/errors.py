"""Exception hierarchy shared by all multipipe modules.

The CLI maps these onto exit codes: invalid or degenerate input data exit
with 2, numerical failures (rank-zero pooling, non-convergence) with 3, and
usage errors with 1.  Library users can catch :class:`MultipipeError` to get
everything at once.
"""


class MultipipeError(Exception):
    """Base class for all errors raised by multipipe."""


class InvalidInputError(MultipipeError):
    """Malformed input: bad shapes, incomplete data rectangles, bad values."""


class DegenerateDataError(MultipipeError):
    """Structurally valid input that the requested computation cannot use.

    Examples: a zero-variance pipeline where a correlation is required, or a
    bootstrap where too many resamples lose one exposure group.  Extra
    context (e.g. the estimate computed before the degeneracy was hit) may be
    attached as keyword attributes.
    """

    def __init__(self, message, **context):
        super().__init__(message)
        for key, value in context.items():
            setattr(self, key, value)


class NumericalError(MultipipeError):
    """A numerical procedure failed: rank-zero spectrum, undefined weights."""


class ConvergenceError(NumericalError):
    """An iterative solver could not bracket or reach its tolerance."""


#: machine-parsable error category used in the CLI's ``ERROR[code]:`` prefix
ERROR_CATEGORY = {
    InvalidInputError: "data",
    DegenerateDataError: "data",
    ConvergenceError: "numeric",
    NumericalError: "numeric",
}

#: process exit codes per error category (0 = success, 1 = usage error)
EXIT_CODE = {"data": 2, "numeric": 3}


def error_category(exc: MultipipeError) -> str:
    """Return the CLI category string for a multipipe exception."""
    for cls in type(exc).__mro__:
        if cls in ERROR_CATEGORY:
            return ERROR_CATEGORY[cls]
    return "numeric"
