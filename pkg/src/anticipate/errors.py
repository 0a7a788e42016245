"""Exception types shared across the package."""


class AnticipateError(Exception):
    """Base class for all package errors."""


class ConfigError(AnticipateError, ValueError):
    """Invalid configuration value or combination."""


class DomainError(AnticipateError, ValueError):
    """Argument outside the domain of an operation."""


class ShapeError(AnticipateError, ValueError):
    """Array dimensions do not match."""


class ParseError(AnticipateError, ValueError):
    """Malformed, truncated or inconsistent file."""


class EmptyFrameError(AnticipateError, ValueError):
    """A frame has no present objects to attend over."""


class NumericError(AnticipateError, ArithmeticError):
    """Non-finite value produced where a finite one is required."""
