"""Exception taxonomy for the whole package.

Every error the library raises derives from PsanetError so callers can catch
one base. The CLI maps ConfigError/UsageError to exit code 2 and everything
else to exit code 1.
"""


class PsanetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PsanetError):
    """Tensor dimensions disagree; the message names the offending axis."""


class LengthError(PsanetError):
    """An operation would produce a degenerate (empty) length axis."""


class ConfigError(PsanetError):
    """Invalid configuration value or violated architecture constraint."""


class UsageError(PsanetError):
    """API misuse, e.g. a second backward pass through a consumed graph."""


class DataError(PsanetError):
    """Bad input data: labels outside {0,1}, malformed protocol lines, ..."""


class NumericsError(PsanetError):
    """Non-finite values appeared; the message names the first offending layer."""


class MetricError(PsanetError):
    """A metric was asked of an impossible score set (e.g. a single class)."""


class CheckpointError(PsanetError):
    """Corrupt, truncated, or version-incompatible checkpoint file."""


class WavError(DataError):
    """Base class for WAV container problems."""


class UnsupportedCodecError(WavError):
    """The WAV file uses a codec or sample layout we do not read."""


class TruncatedWavError(WavError):
    """The WAV header or data chunk ends before its declared size."""


class EmptyAudioError(WavError):
    """The WAV file contains a zero-length data chunk."""
