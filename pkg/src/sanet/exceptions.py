"""Exception hierarchy shared by every sanet module."""


class SanetError(Exception):
    """Base class for all package errors."""


class ShapeError(SanetError, ValueError):
    """Tensor or vector shapes do not satisfy an operation's contract."""


class ConfigError(SanetError, ValueError):
    """A configuration is inconsistent with the data it is applied to."""


class FormatError(SanetError, ValueError):
    """A serialized file is malformed (bad magic, truncated payload, ...)."""


class NonFiniteError(SanetError, ArithmeticError):
    """A NaN or infinity appeared where a finite value was required."""


class NotFittedError(SanetError, AttributeError):
    """An estimator was used before ``fit``."""
