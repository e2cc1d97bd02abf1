"""Exception types shared across the package.

Parameter and structured-input violations subclass ValueError so that
call sites may catch either the specific type or the builtin.
"""


class QuasimixError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(QuasimixError, ValueError):
    """A scalar argument is outside its documented domain."""


class InvalidInputError(QuasimixError, ValueError):
    """A structured input (graph, matching, kernel, partition) is unusable."""


class SamplingFailureError(QuasimixError, RuntimeError):
    """A rejection sampler exhausted its resample budget."""


class SizeLimitError(QuasimixError, ValueError):
    """An exact routine was asked for an instance above its hard size cap."""


class InsufficientDataError(QuasimixError, RuntimeError):
    """An estimator received fewer samples than its validity floor."""
