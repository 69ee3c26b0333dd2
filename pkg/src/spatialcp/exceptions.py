"""Exception hierarchy shared by all modules."""


class SpatialCPError(Exception):
    """Base class for every error raised by this package."""


class DataError(SpatialCPError, ValueError):
    """Malformed or inconsistent input data."""


class MissingColumn(DataError):
    def __init__(self, name):
        super().__init__(f"missing column: {name!r}")
        self.name = name


class ParseError(DataError):
    def __init__(self, row, column, value=None):
        super().__init__(f"cannot parse row {row}, column {column!r}: {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(DataError):
    pass


class InvalidFractions(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NonPositiveResponse(DataError):
    pass


class TooFewSamples(DataError):
    pass


class UnknownDistrict(DataError):
    pass


class NumericalError(SpatialCPError, ArithmeticError):
    """Numerical failure (non-PD matrix, non-finite objective, ...)."""


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class MissingAttachment(SpatialCPError, ValueError):
    """A score or weight scheme lacks the model it needs."""


class EmptyScores(SpatialCPError, ValueError):
    pass


class InvalidLevel(SpatialCPError, ValueError):
    pass


class ConfigError(SpatialCPError, ValueError):
    pass


class MissingResults(SpatialCPError, FileNotFoundError):
    pass
