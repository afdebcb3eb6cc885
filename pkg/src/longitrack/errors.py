"""Exception hierarchy shared across the package."""


class LongitrackError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LongitrackError):
    """Arrays that must agree in shape do not."""


class OutOfBounds(LongitrackError):
    """A voxel coordinate lies outside its reference grid."""


class MissingLesion(LongitrackError):
    """A lesion id is absent from the mask it was looked up in."""


class MissingField(LongitrackError):
    """An operation needs a deformation field the case does not carry."""


class GenerationError(LongitrackError):
    """Synthetic data generation failed (placement or field validity)."""


class AlignmentError(LongitrackError):
    """Paired prediction/ground-truth lists are not aligned."""


class EmptyInput(LongitrackError):
    """An aggregate was requested over an empty collection."""


class EmptyTaskError(LongitrackError):
    """A training dataset contains nothing to learn from."""


class ConfigError(LongitrackError):
    """Incompatible or invalid configuration."""


class ParseError(LongitrackError):
    """A manifest or config file is malformed; message carries context."""
