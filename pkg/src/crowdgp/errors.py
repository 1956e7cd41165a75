"""Exception types shared across the package."""


class CrowdGpError(Exception):
    """Base class for all crowdgp errors."""


class ParseError(CrowdGpError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(CrowdGpError):
    """Inputs violate a documented precondition or invariant."""


class SchemaError(CrowdGpError):
    """A model file does not conform to the expected schema."""


class NumericalError(CrowdGpError):
    """A linear-algebra step failed beyond recovery."""
