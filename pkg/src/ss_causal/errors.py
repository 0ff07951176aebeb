"""Exception taxonomy shared across the package."""


class SsCausalError(Exception):
    """Base class for all package errors."""


class ParseError(SsCausalError):
    """A cell could not be parsed as a number."""


class SchemaError(SsCausalError):
    """CSV structure or column mapping is inconsistent."""


class ValidationError(SsCausalError):
    """Inputs violate a documented precondition."""


class RankError(SsCausalError):
    """Unpenalized fit requested on an underdetermined problem."""


class DegenerateError(SsCausalError):
    """Too little usable data for the requested fit or evaluation."""


class ConvergenceError(SsCausalError):
    """Iterative solver failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ConfigurationError(SsCausalError):
    """Mutually inconsistent configuration (variant/bundle mismatch etc.)."""
