"""Exception hierarchy shared across the package.

The CLI maps any :class:`OctpadError` to exit code 2 (data error); usage
errors exit with 1.
"""


class OctpadError(Exception):
    """Base class for all octpad errors."""


class ImageFormatError(OctpadError):
    """Unreadable, malformed, or unsupported image file."""


class ManifestError(OctpadError):
    """Invalid scan manifest content."""


class ConfigError(OctpadError):
    """Invalid configuration value or configuration file."""


class DataError(OctpadError):
    """Input data violates an operation's precondition (degenerate image,
    image too small, empty score list, ...)."""


class TrainingError(OctpadError):
    """Training cannot proceed: bad dataset composition or divergence."""


class CheckpointError(OctpadError):
    """Corrupt, truncated, or incompatible model checkpoint."""


class EvaluationError(OctpadError):
    """Metric computation is undefined for the given inputs."""
