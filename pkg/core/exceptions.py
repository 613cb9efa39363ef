"""
Exception hierarchy for the scene-aware separation system
"""


class SeparationError(Exception):
    """Base class for every error raised by the separation pipeline"""

    exit_code = 1


class ConfigError(SeparationError):
    """Invalid configuration (bad flag values, non-COLA STFT settings, ...)"""

    exit_code = 2


class DataError(SeparationError):
    """Invalid or missing data"""

    exit_code = 3


class LengthError(DataError):
    """Clip lengths or sample rates do not line up"""


class ShapeError(DataError):
    """Grid, channel or parameter shapes do not line up"""


class CheckpointError(DataError):
    """Malformed AVSA container or missing checkpoint entries"""


class NumericError(SeparationError):
    """Numerical failure"""

    exit_code = 4


class MetricError(NumericError):
    """BSS-Eval cannot be computed for a source"""


class GradientError(NumericError):
    """Non-finite forward value or gradient"""

    def __init__(self, message: str, location: str = "unknown"):
        super().__init__(f"{message} (at {location})")
        self.location = location
