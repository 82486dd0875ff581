"""Package exception types, mapped to CLI exit codes in cli.py."""


class ConflabError(Exception):
    """Base class for all package errors."""


class ConfigError(ConflabError, ValueError):
    """Invalid configuration or malformed experiment spec (CLI exit 2)."""


class NumericError(ConflabError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class StateError(ConflabError, RuntimeError):
    """Operation invoked in an invalid order, e.g. backward on an empty graph."""


class DataFormatError(ConflabError, ValueError):
    """Malformed corpus files (line-count mismatch etc.)."""


class DivergenceError(ConflabError, RuntimeError):
    """Training produced a non-finite loss (CLI exit 3)."""


class VocabMismatchError(ConflabError, ValueError):
    """Checkpoint/corpus vocabulary disagreement (CLI exit 4)."""


class SingleClassError(ConflabError, ValueError):
    """Detection metrics need both a positive and a negative class."""


class CorrelationUndefinedError(ConflabError, ValueError):
    """Pearson correlation is undefined for constant or too-short inputs."""
