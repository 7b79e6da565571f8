"""Exception hierarchy.

Each error carries the CLI exit code it maps to: 2 for usage problems,
3 for dataset problems, 4 for model/data mismatches.
"""


class PPGSQAError(Exception):
    exit_code = 1


class UsageError(PPGSQAError):
    exit_code = 2


class DataError(PPGSQAError):
    exit_code = 3


class ModelError(PPGSQAError):
    exit_code = 4


# dsp
class InvalidBand(UsageError, ValueError):
    pass


class NonFinite(PPGSQAError, FloatingPointError):
    pass


class DegenerateSignal(DataError, ValueError):
    pass


class RecordTooShort(ModelError, ValueError):
    pass


# nn engine
class ShapeMismatch(ModelError, ValueError):
    pass


class InvalidMode(PPGSQAError, RuntimeError):
    pass


class StaleCache(PPGSQAError, RuntimeError):
    pass


class InvalidP(UsageError, ValueError):
    pass


# training
class TooFewSubjects(DataError, ValueError):
    pass


class EmptyFold(DataError, ValueError):
    pass


class EmptyDataset(DataError, ValueError):
    pass


# metrics
class SingleClass(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


# data io
class MalformedFile(DataError, ValueError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class CoverageGap(DataError, ValueError):
    pass


class VersionMismatch(ModelError, ValueError):
    pass


class TruncatedBody(ModelError, ValueError):
    pass


class IoFailure(DataError, OSError):
    pass


class RangeError(DataError, ValueError):
    pass
