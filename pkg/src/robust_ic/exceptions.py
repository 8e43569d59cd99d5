"""Exception types raised by the simulator."""


class RobustICError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(RobustICError, ValueError):
    """An argument is outside its admissible range."""


class ConfigError(InvalidArgument):
    """A configuration document or scenario is malformed or infeasible."""


class NumericFailure(RobustICError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class DegenerateStream(NumericFailure):
    """A stream has no usable signal component (zero steering vector, mu1 = 0, ...)."""
