"""Exception types shared across the engine, mapped to CLI exit codes."""


class ConfigurationError(ValueError):
    """Bad parameters, mismatched bases/scales/levels, invalid arguments. Exit code 2."""


class LevelExhaustedError(ConfigurationError):
    """No rescale primes left on the modulus chain."""


class IngestionError(ConfigurationError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnrecoverableFaultError(RuntimeError):
    """A guard mismatch persisted after the retry budget. Exit code 3."""
