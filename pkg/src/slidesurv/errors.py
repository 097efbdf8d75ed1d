"""Exception hierarchy shared across the package.

Each class maps to a CLI exit code (see cli.EXIT_CODES) so callers can
distinguish error categories without parsing messages.
"""


class SlidesurvError(Exception):
    """Base class for all package errors."""


class DimensionError(SlidesurvError):
    """Operand shapes are incompatible."""


class ConfigError(SlidesurvError):
    """Invalid configuration or generator sizes."""


class DataLoadError(SlidesurvError):
    """Manifest or matrix file could not be loaded."""


class BinningError(SlidesurvError):
    """Too few uncensored patients to derive time bins."""


class SelectionError(SlidesurvError):
    """Patch selection request cannot be satisfied."""


class EncodingError(SlidesurvError):
    """Encoder received an empty or malformed token sequence."""


class LossError(SlidesurvError):
    """Survival loss evaluated on a record without an assigned bin."""


class MetricError(SlidesurvError):
    """Metric is undefined on the given inputs."""


class TrainingError(SlidesurvError):
    """Training diverged or was misconfigured."""
