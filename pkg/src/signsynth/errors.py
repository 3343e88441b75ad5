"""Exception hierarchy; the CLI maps these onto exit codes."""


class DataError(ValueError):
    """Input data violates a schema or invariant."""


class MalformedIndexError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class TemplateError(DataError):
    pass


class SchemaError(DataError):
    pass


class InvalidBoxError(DataError):
    pass


class ScoreRangeError(DataError):
    pass


class NoGroundTruthError(DataError):
    pass


class ConfigError(DataError):
    pass


class DegenerateHomographyError(ValueError):
    """A 3D rotation pushes part of the template behind the camera or edge-on."""


class PlacementError(ValueError):
    """A template does not fit where it was asked to go."""
