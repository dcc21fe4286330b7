"""Exception hierarchy shared by the library and the CLI.

Exit codes: 2 for configuration problems, 3 for data/file problems,
4 for violated numeric invariants.
"""


class ScenemodError(Exception):
    exit_code = 1


class ConfigError(ScenemodError):
    """Bad configuration: unknown keys, invalid attribute values, bad CLI args."""

    exit_code = 2


class DataError(ScenemodError):
    """Bad or missing data: absent files, malformed inputs, incompatible stores."""

    exit_code = 3


class NumericError(ScenemodError):
    """Violated numeric invariant: non-finite values, weight sums, rho range."""

    exit_code = 4


class ShapeError(DataError):
    """Operand shapes are incompatible. The message names both shapes."""


class CheckpointError(DataError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass
