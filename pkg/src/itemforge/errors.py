"""Exception hierarchy shared across the package."""


class ItemForgeError(Exception):
    """Base class for all package errors."""


class ConfigError(ItemForgeError):
    """Invalid or unusable configuration."""


class BackendError(ItemForgeError):
    """A generation backend failed (network, auth, exhausted retries)."""


class ScriptError(BackendError):
    """The scripted backend ran out of entries or hit a mismatched request."""


class ParseError(ItemForgeError):
    """Model output could not be turned into the expected structure."""


class DataError(ItemForgeError):
    """Input data (sources, lexicons, manifests, stored items) is unusable."""


class CalibrationError(ItemForgeError):
    """No valid difficulty sequence can be extracted."""
