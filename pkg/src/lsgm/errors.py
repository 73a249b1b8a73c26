"""Exception hierarchy shared by all lsgm modules.

The CLI maps these onto exit codes: data/format problems exit 3, numeric
failures exit 4 (usage errors exit 2 before library code runs).
"""


class LsgmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(LsgmError, ValueError):
    """An argument violates an operation's contract (shape, emptiness, range)."""


class NotPositiveDefiniteError(LsgmError, ArithmeticError):
    """Cholesky factorization failed even after ridge escalation."""


class TooLargeError(LsgmError):
    """A guarded exhaustive computation would exceed its size bound."""


class ZeroRowError(LsgmError):
    """A transition row has no observed counts and smoothing is zero."""


class FormatError(LsgmError):
    """Base class for file-format problems."""


class NotNpyError(FormatError):
    """File does not start with the NPY magic string."""


class UnsupportedFormatError(FormatError):
    """Recognized format, but a variant this package does not handle."""


class CorruptFileError(FormatError):
    """File is recognized but structurally damaged or truncated."""
