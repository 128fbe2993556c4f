"""Exception types shared across the package, mapped to CLI exit codes."""


class ConvRecError(Exception):
    """Base error. ``exit_code`` drives the CLI process status."""

    exit_code = 2


class ConfigError(ConvRecError):
    """Bad flag value, malformed config file, inconsistent options."""

    exit_code = 1


class CorpusFormatError(ConvRecError):
    """Malformed corpus record; carries the offending line number when known."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class GraphValidationError(ConvRecError):
    """Knowledge-graph file violates the schema (dangling edge, bad type, ...)."""


class DataError(ConvRecError):
    """Data inconsistent with the loaded graph/model (e.g. unknown gold id)."""


class NumericError(ConvRecError):
    """Non-finite values encountered during a forward pass or training."""

    exit_code = 3
