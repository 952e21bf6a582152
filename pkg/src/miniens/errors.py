"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for usage/config
problems, 2 for data problems, 3 for numeric failures.
"""


class MiniensError(Exception):
    exit_code = 1


class ConfigError(MiniensError):
    exit_code = 1


class DataError(MiniensError):
    exit_code = 2


class NumericError(MiniensError, ArithmeticError):
    """A tensor op produced NaN or Inf."""

    exit_code = 3


class ShapeMismatch(MiniensError, ValueError):
    pass


class GraphDetached(MiniensError, RuntimeError):
    pass


class IdOutOfRange(MiniensError, IndexError):
    pass


class VocabMismatch(ConfigError, ValueError):
    pass


class UnknownLanguage(ConfigError, ValueError):
    pass


class ConfigMismatch(ConfigError, ValueError):
    pass


class CheckpointMismatch(ConfigError):
    pass


class EmptyPredictionList(MiniensError, ValueError):
    pass


class LengthMismatch(MiniensError, ValueError):
    pass


class EmptyEvaluation(MiniensError, ValueError):
    pass


class EmptyCorpus(DataError, ValueError):
    pass


class MalformedRow(DataError, ValueError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: malformed row ({reason})")
        self.path = path
        self.line = line


class UnknownLabel(DataError, ValueError):
    def __init__(self, path, line, label):
        super().__init__(f"{path}:{line}: unknown label {label!r}")
        self.path = path
        self.line = line
        self.label = label


class DuplicateTestLeak(DataError):
    pass


class MissingData(DataError, FileNotFoundError):
    pass
