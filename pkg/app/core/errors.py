from typing import Optional


class SpinorError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it escapes a command."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ArgumentError(SpinorError, ValueError):
    exit_code = 2


class DataValidationError(SpinorError):
    exit_code = 3


class ParseError(DataValidationError):
    def __init__(self, detail: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            detail = f"{detail} (line {line}, column {column})"
        super().__init__(detail)
        self.line = line
        self.column = column


class FormatVersionError(DataValidationError):
    pass


class CorpusEncodingError(DataValidationError):
    pass


class NumericError(SpinorError, ArithmeticError):
    exit_code = 4


def summarize_validation_error(exc) -> str:
    """Flatten a pydantic ValidationError into one line."""
    parts = []
    for err in exc.errors():
        loc = ".".join(str(item) for item in err.get("loc", ()))
        parts.append(f"{loc}: {err.get('msg')}" if loc else err.get("msg", ""))
    return "; ".join(parts)
