"""Exception hierarchy shared by every geocells module.

Each exception carries a process exit code so the command line front end can
map failures to the documented codes without a lookup table.
"""


class GeocellsError(Exception):
    exit_code = 2


class InvalidCoordinate(GeocellsError, ValueError):
    pass


class InvalidLevel(GeocellsError, ValueError):
    pass


class InvalidToken(GeocellsError, ValueError):
    pass


class EmptyDataset(GeocellsError):
    def __init__(self, message="empty dataset"):
        super().__init__(message)


class DegeneratePartition(GeocellsError):
    pass


class PartitionFileError(GeocellsError):
    pass


class ParseError(GeocellsError):
    """A JSONL line failed validation. ``line`` is 1-based."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SignatureError(GeocellsError):
    pass


class ConfigError(GeocellsError):
    exit_code = 1


class DimensionError(GeocellsError, ValueError):
    pass


class LabelError(GeocellsError, ValueError):
    pass


class VersionMismatch(GeocellsError):
    exit_code = 3


class NumericError(GeocellsError, ArithmeticError):
    exit_code = 4


class SequenceLengthError(GeocellsError):
    pass
