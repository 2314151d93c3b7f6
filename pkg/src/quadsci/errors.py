"""Exception hierarchy shared by all quadsci modules.

Data/shape problems map to CLI exit code 2, numeric/training failures to
exit code 3 (see quadsci.cli).
"""


class QuadsciError(Exception):
    """Base class for all quadsci errors."""


class ShapeError(QuadsciError):
    """Array dimensions do not satisfy an operation's contract."""


class FormatError(QuadsciError):
    """A file is not a valid VCUBE/VWTS container (bad magic, version, ...)."""


class TruncationError(FormatError):
    """Header-declared payload size disagrees with the actual payload."""


class DataError(QuadsciError):
    """Payload values violate an invariant (NaN/Inf, non-binary mask, ...)."""


class ConfigError(QuadsciError):
    """A configuration value is out of its allowed range."""


class NumericError(QuadsciError):
    """Non-finite values appeared during numerical evaluation."""


class ResourceError(QuadsciError):
    """An instance is too large for a brute-force/oracle code path."""


class TrainingError(QuadsciError):
    """Training diverged or otherwise failed."""
