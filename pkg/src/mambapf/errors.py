"""Exception hierarchy shared across the package.

Every error carries a short machine-greppable ``code`` so the CLI can emit
one-line diagnostics of the form ``ERROR[code]: message``.
"""


class MambaPFError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidInputError(MambaPFError):
    code = "invalid_input"


class DegenerateGeometryError(MambaPFError):
    code = "degenerate_geometry"


class CoverageError(MambaPFError):
    code = "coverage"


class ModeError(MambaPFError):
    code = "mode"


class NumericError(MambaPFError):
    code = "numeric"


class ParseError(MambaPFError):
    code = "parse_error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(MambaPFError):
    code = "checkpoint"
