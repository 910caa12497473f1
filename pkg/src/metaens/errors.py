"""Exception hierarchy shared by the library and the CLI.

The CLI maps ``UsageError`` to exit code 1, ``DataError`` (and subclasses)
to exit code 2 and ``InvariantError`` to exit code 3.
"""


class MetaEnsError(Exception):
    """Base class for all errors raised by metaens."""


class UsageError(MetaEnsError, ValueError):
    """Invalid configuration, flag or argument value."""


class DataError(MetaEnsError, ValueError):
    """Input data cannot be used as given."""


class ParseError(DataError):
    """A dataset or score file could not be parsed."""


class CacheError(DataError):
    """Base class for score-cache problems."""


class MissingCacheError(CacheError):
    pass


class StaleCacheError(CacheError):
    """The cached scores were computed from a different dataset or pool."""


class DetectorError(DataError):
    """A detector cannot score the given dataset."""


class ModelFormatError(DataError):
    """A serialized gain model cannot be loaded."""


class FormatVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class FeatureLayoutError(ModelFormatError):
    """State features were built with a different layout than the model."""


class InvariantError(MetaEnsError, RuntimeError):
    """An internal invariant was violated; indicates a bug."""
