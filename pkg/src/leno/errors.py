"""Exception taxonomy.

The CLI maps these onto exit codes: InputError -> 2, StageOrderError -> 3,
NumericalError -> 4. Anything else is a genuine bug and escapes as a
traceback.
"""


class LenoError(Exception):
    """Base class for all package errors."""


class InputError(LenoError):
    """Malformed or inconsistent input: files, configs, shapes, domains."""


class StageOrderError(LenoError):
    """A pipeline stage was invoked before its prerequisites exist."""


class NumericalError(LenoError):
    """Numerical failure: solver non-convergence, blow-up, NaN loss."""
