"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or ranks."""


class DomainError(ValueError):
    """A value lies outside an operation's numeric domain (log of 0, NaN input, ...)."""


class DegeneratePriorError(ValueError):
    """A class-prior entry hit 0 or 1, which the parameterization forbids."""


class DatasetError(ValueError):
    """Dataset generation or ingestion failed (e.g. disjointness post-check)."""


class FormatError(ValueError):
    """A serialized artifact (IDX file, checkpoint, CSV) is malformed."""


class ConfigError(ValueError):
    """An invalid run configuration (e.g. BS not a multiple of MBS)."""
