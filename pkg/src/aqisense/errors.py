"""Exception types shared across the package."""


class AqiSenseError(Exception):
    """Base class for all package errors."""


class InputError(AqiSenseError, ValueError):
    """An argument violates a documented precondition."""


class StateError(AqiSenseError, RuntimeError):
    """An operation was invoked on an object in an unusable state."""


class NumericError(AqiSenseError, ArithmeticError):
    """A numeric procedure produced non-finite or otherwise unusable values."""


class FormatError(AqiSenseError, ValueError):
    """A file or stream does not conform to its declared format."""
