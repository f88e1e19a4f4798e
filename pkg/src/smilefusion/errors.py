"""Exception hierarchy shared across the package.

Everything raised deliberately by smilefusion derives from SmileFusionError,
so callers (and the CLI) can separate our failures from genuine bugs.
"""


class SmileFusionError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGeometryError(SmileFusionError):
    """Landmark geometry too degenerate to define a pose or a signal
    (collinear reference points, zero-length chords, zero scale)."""


class KeypointIndexError(SmileFusionError):
    """A frame has fewer landmarks than the largest required index."""


class LandmarkParseError(SmileFusionError):
    """A landmark file is malformed (bad JSON, missing fields, ragged
    frames, non-numeric or non-finite coordinates)."""


class SchemaVersionError(LandmarkParseError):
    """A landmark file declares an unsupported schema string."""


class NoPhaseStructureError(SmileFusionError):
    """A region signal is constant: no onset/apex/offset can be located."""


class ShapeMismatchError(SmileFusionError):
    """Tensor operands have incompatible shapes."""


class NonFiniteValueError(SmileFusionError):
    """An operation produced NaN or infinity."""


class NotScalarLossError(SmileFusionError):
    """backward() was called on a non-scalar tensor."""


class UnknownFusionError(SmileFusionError):
    """An unrecognized fusion strategy name was requested."""


class UnsupportedInferenceModeError(SmileFusionError):
    """The trained fusion strategy cannot run without marker input."""


class EmptyClassError(SmileFusionError):
    """A training set is missing one of the two classes."""


class TooFewSubjectsError(SmileFusionError):
    """Fewer distinct subjects than cross-validation folds."""


class InvalidConfigError(SmileFusionError):
    """A configuration value is out of range or inconsistent."""
