"""Exception types raised across the package."""


class PsUpmixError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PsUpmixError):
    """Unsupported or malformed file format."""


class SampleRateError(PsUpmixError):
    """Audio sample rate differs from the one the pipeline is defined at."""


class ChannelCountError(PsUpmixError):
    """Wrong number of audio channels for the requested operation."""


class LengthError(PsUpmixError):
    """Signal too short for the requested operation."""


class ShapeError(PsUpmixError):
    """Array arguments have incompatible shapes."""


class ConfigError(PsUpmixError):
    """Invalid configuration value."""


class TokenRangeError(PsUpmixError):
    """Token id outside the valid vocabulary range."""


class MaskError(PsUpmixError):
    """Invalid mask pattern (e.g. no masked positions for a masked loss)."""


class DataError(PsUpmixError):
    """Empty or unusable data collection."""


class ModelError(PsUpmixError):
    """Model produced unusable output (NaN logits, diverged loss, ...)."""
