"""Exception hierarchy shared by every module."""


class SpencerError(Exception):
    pass


class DimensionError(SpencerError, ValueError):
    pass


class ParameterError(SpencerError, ValueError):
    pass


class ContractError(SpencerError, ValueError):
    pass


class DegenerateVectorError(SpencerError, ValueError):
    pass


class WrongModelKindError(SpencerError, TypeError):
    pass


class CannotCompressError(SpencerError, ValueError):
    pass


class DataError(SpencerError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingTruthError(SpencerError, LookupError):
    pass


class ConfigError(SpencerError, ValueError):
    pass


class CheckpointError(SpencerError):
    """Base class for anything that goes wrong reading a binary artifact."""


class FormatError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass
