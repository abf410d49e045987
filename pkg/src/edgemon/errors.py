"""Exceptions shared across the package."""


class ValidationError(ValueError):
    """A model parameter, configuration value, or decision violates its contract."""


class ConfigError(ValidationError):
    """A config file line failed to parse or validate.

    Carries the offending line number and key so the CLI can point at them.
    """

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}"
        if key is not None:
            prefix += f"{' ' if prefix else ''}key '{key}'"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget before meeting its tolerance."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace
