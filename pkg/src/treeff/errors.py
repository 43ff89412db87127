"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class BoundsError(IndexError):
    """A row or node index falls outside the valid range."""


class FormatError(ValueError):
    """A serialized blob is malformed (bad magic, bad flags, bad header fields)."""


class LengthError(FormatError):
    """A serialized blob's actual length disagrees with its header."""


class VersionError(FormatError):
    """A serialized blob declares an unsupported format version."""


class ResourceError(RuntimeError):
    """A run could not be completed with the available memory or time."""


class UnfairComparisonError(ValueError):
    """Two benchmark runs differ in a dimension that makes their ratio meaningless."""
