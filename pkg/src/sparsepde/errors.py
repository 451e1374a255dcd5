"""Exception hierarchy and CLI exit codes."""


class SparsePdeError(Exception):
    exit_code = 1


class ConfigError(SparsePdeError, ValueError):
    """Invalid configuration, dimension mismatch or out-of-range parameter."""

    exit_code = 2


class ParameterRangeError(ConfigError):
    """PDE parameters outside the environment's declared box."""


class DivergenceError(SparsePdeError, FloatingPointError):
    """Non-finite values in a PDE field, loss or gradient."""

    exit_code = 3


class CheckpointError(SparsePdeError, OSError):
    exit_code = 4
    code = "checkpoint"


class CheckpointCorruptError(CheckpointError):
    code = "corrupt"


class CheckpointVersionError(CheckpointError):
    code = "version"


class CheckpointShapeError(CheckpointError):
    code = "shape"


class CheckpointMismatchError(CheckpointError):
    """Checkpoint written for a different environment or variant."""

    code = "mismatch"
