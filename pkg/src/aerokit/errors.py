"""Exception taxonomy shared across the toolkit.

Every error carries a stable machine-parseable ``category`` used by the CLI
for single-line error reporting and exit-code mapping.
"""


class AerokitError(Exception):
    category = "runtime_error"


class DataFormatError(AerokitError):
    """Unparseable or malformed on-disk data."""

    category = "bad_data"


class MetaParseError(DataFormatError):
    category = "bad_meta"


class MissingFrameError(DataFormatError):
    category = "missing_frames"


class FrameDimensionError(DataFormatError):
    category = "frame_dims"


class MissingArtifactError(AerokitError):
    """A required input file (checkpoint, ranges, report) does not exist."""

    category = "missing_artifact"


class CoverageError(AerokitError):
    """Sensor stream does not span the requested clip window."""

    category = "coverage_error"


class SchemaError(AerokitError):
    """A structured file violates its schema (wrong keys, NaN, bad shapes)."""

    category = "schema_error"
