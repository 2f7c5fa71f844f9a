"""Exception types shared across the package."""


class PhrasecompError(Exception):
    """Base class for all errors raised by phrasecomp."""


class ConfigError(PhrasecompError):
    """Invalid configuration value or run setup."""


class CorpusFormatError(PhrasecompError):
    """Malformed or unusable input data file."""


class ModelIOError(PhrasecompError):
    """Model file cannot be written or read back."""


class SamplingError(PhrasecompError):
    """Negative sampling cannot produce a corrupted tuple."""


class EvaluationError(PhrasecompError):
    """Evaluation request is degenerate (empty data, constant scores, ...)."""


class UnknownTokenError(PhrasecompError, LookupError):
    """A word or id does not resolve in the model's vocabulary."""
