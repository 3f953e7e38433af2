"""Shared exception types."""


class OcmrError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(OcmrError):
    """A data file could not be parsed. Carries the path and 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ValidationError(OcmrError):
    """An invariant of the data model was violated."""


class EmptyInputError(ValidationError):
    """An operation received empty input where non-empty input is required."""


class ConfigError(OcmrError):
    """A configuration value or combination is invalid."""


class StaleCacheError(OcmrError):
    """A cached artifact was produced under a different configuration."""


class ContractViolation(OcmrError):
    """An operation was invoked outside its contract (wrong mode or wrong candidate)."""
