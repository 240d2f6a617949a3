"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: usage/config problems -> 1, bad input
data -> 2, numerical divergence -> 3.
"""


class DpgError(Exception):
    exit_code = 1


class UsageError(DpgError):
    exit_code = 1


class ConfigError(DpgError):
    exit_code = 1


class DataError(DpgError):
    exit_code = 2


class IngestionError(DataError):
    pass


class SchemaError(DataError):
    pass


class ClipLengthError(DataError):
    pass


class ParseError(DataError):
    pass


class SplitError(DataError):
    pass


class ShapeError(DpgError, ValueError):
    pass


class ParameterError(DpgError, ValueError):
    pass


class DivergenceError(DpgError, FloatingPointError):
    exit_code = 3


class CheckpointError(DataError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or unsupported format version."""


class CheckpointCorruptError(CheckpointError):
    """File ends early or its payload fails the checksum."""


class CheckpointIntegrityError(CheckpointError):
    """Header directory disagrees with the stored blocks or the config."""
