"""Exception types shared across the toolkit."""


class LenseekError(Exception):
    """Base class for all toolkit errors."""


class DomainError(LenseekError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigError(LenseekError, ValueError):
    """Invalid configuration or parameter combination."""


class ParseError(LenseekError, ValueError):
    """A file could not be parsed; message names the offending row/field."""


class InsufficientDataError(LenseekError):
    """Too few valid measurements to run an operation."""


class NoSignalError(LenseekError):
    """The observation or template carries no directional information."""


class TraceError(LenseekError):
    """An event trace is missing events required by a computation."""
