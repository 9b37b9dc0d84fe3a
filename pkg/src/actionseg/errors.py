"""Exception types shared across the package."""


class ActionsegError(Exception):
    """Base class for errors raised by this package."""


class DataError(ActionsegError):
    """Missing, malformed, or inconsistent input data (files, manifests, models)."""


class ConfigError(ActionsegError):
    """Invalid configuration file or parameter combination."""
