"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes, so raising the right class matters:
ConfigError -> 2, MissingArtifactError -> 3, everything else -> 4.
"""


class RoomRefError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RoomRefError):
    """A configuration value violates its documented constraint."""


class MissingArtifactError(RoomRefError):
    """A required input file does not exist."""


class DensityError(RoomRefError):
    """Object placement failed after the configured number of retries."""


class ResolutionError(RoomRefError):
    """No candidate satisfies the relation (wrong class, empty side, ...)."""


class AmbiguityError(RoomRefError):
    """Two candidates are within the tie tolerance of each other."""


class GenerationSkip(RoomRefError):
    """No unambiguous utterance could be rendered for this scene/seed.

    Callers retry with a fresh seed; this never escapes corpus generation.
    """


class SequenceOverflowError(RoomRefError):
    """An encoded token sequence exceeds the configured maximum length."""


class DataError(RoomRefError):
    """Dataset records are inconsistent (unknown scene, missing fields, ...)."""
