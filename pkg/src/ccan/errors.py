"""Exception hierarchy. ``exit_code`` maps each family onto the CLI's exit codes."""


class CcanError(Exception):
    exit_code = 1


class UsageError(CcanError):
    """API misuse: backward on a non-scalar, stepping without gradients, ..."""

    exit_code = 2


class ConfigError(CcanError):
    exit_code = 2


class DataError(CcanError):
    exit_code = 1


class AudioLoadError(DataError):
    pass


class FeatureError(DataError):
    pass


class CacheError(DataError):
    pass


class NumericalError(CcanError):
    exit_code = 3


class DegenerateClusterError(NumericalError):
    pass


class InitializationError(ConfigError):
    """Clustering cannot be initialized, e.g. fewer samples than clusters."""
