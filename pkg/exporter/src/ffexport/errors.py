"""Error types raised by the exporter."""


class MappingError(ValueError):
    """A manifest field is missing, unknown, or names a tensor the checkpoint lacks."""


class DimensionError(ValueError):
    """A source tensor's shape disagrees with what its field requires."""


class FormatError(ValueError):
    """A file handed to one of the readers is not a well-formed interchange file."""
