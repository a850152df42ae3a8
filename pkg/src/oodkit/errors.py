"""Exception types shared across the toolkit."""


class OodkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(OodkitError):
    """Invalid configuration (bad value, missing key, inconsistent dims)."""


class MalformedFileError(OodkitError):
    """File is truncated or does not parse under its declared format."""


class VersionMismatchError(OodkitError):
    """File magic or format version does not match what this code writes."""


class ArchitectureMismatchError(OodkitError):
    """Checkpoint tensors do not fit the supplied config or centroids."""


class DimensionError(OodkitError):
    """Requested shapes are geometrically impossible (e.g. c > n + 1 simplex)."""


class NumericalError(OodkitError):
    """Non-finite values or solver non-convergence."""
