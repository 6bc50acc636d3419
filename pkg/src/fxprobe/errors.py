"""Exception hierarchy shared by all modules."""


class FxProbeError(Exception):
    """Base class for every error raised by fxprobe."""


class ValidationError(FxProbeError, ValueError):
    """Invalid parameter, configuration or input value."""


class WavFormatError(FxProbeError):
    """Malformed RIFF/WAVE structure."""


class UnsupportedFormatError(FxProbeError):
    """Well-formed WAV using a codec or bit depth we do not decode."""


class LoudnessError(FxProbeError):
    """Clip too short to measure, or silent where a level is required."""


class CorruptionError(FxProbeError):
    """Stored embedding data does not match its declared layout."""


class DimensionError(FxProbeError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class DataError(FxProbeError):
    """Missing, empty or inconsistent dataset content."""


class DivergenceError(FxProbeError, ArithmeticError):
    """Training produced a non-finite loss."""
