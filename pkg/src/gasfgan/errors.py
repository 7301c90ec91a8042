"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes
(config 2, data 3, compute 4).
"""


class GasfganError(Exception):
    pass


class ConfigError(GasfganError, ValueError):
    """Invalid configuration, model spec or run config."""


class DataError(GasfganError, ValueError):
    """Input data is malformed or unsuitable."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ConflictError(DataError):
    """Duplicate (sensor, timestamp) record."""


class DegenerateRangeError(DataError):
    """Log-domain min equals max, so min-max rescaling is undefined."""


class DomainError(DataError):
    """Value outside the [0, 1] domain accepted by the GASF encoder."""


class CorruptImageError(DataError):
    """GASF diagonal outside [-1, 1] beyond rounding tolerance."""


class UnsupportedInputError(DataError):
    """Input the algorithm declines to handle, e.g. a fully missing day."""


class CheckpointError(GasfganError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ComputeError(GasfganError, RuntimeError):
    """Numerical failure: non-finite loss or gradient, all restarts failed."""
