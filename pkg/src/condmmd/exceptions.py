"""Exception hierarchy.

Errors split into two families so the command line front end can map them
onto exit codes: bad input/configuration, and numerical/runtime failures.
"""


class CMMDError(Exception):
    """Base class for all errors raised by condmmd."""


class InputError(CMMDError, ValueError):
    """Malformed data, shape mismatch or an invalid parameter."""


class NumericError(CMMDError, ArithmeticError):
    """A computation could not be carried out on otherwise valid input."""


class DegenerateDataError(NumericError):
    """Data carry no usable spread, e.g. all points identical."""


class NotPSDError(NumericError):
    """A matrix expected to be positive semidefinite has a clearly negative eigenvalue."""


class OverlapError(NumericError):
    """Propensity scores violate the overlap requirement."""


class DegeneratePropensityError(NumericError):
    """Propensity resampling keeps producing an empty sample."""
