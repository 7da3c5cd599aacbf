"""Exception hierarchy.

Every error raised by the library derives from :class:`NwfrError`.  Errors caused
by bad inputs derive from :class:`DataError`; errors caused by ill-posed numerics
derive from :class:`NumericError`.  The command line maps the two families to
distinct exit codes.
"""


class NwfrError(Exception):
    """Base class for all library errors."""


class DataError(NwfrError, ValueError):
    """Invalid input data, arguments or file contents."""


class NumericError(NwfrError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


# graph
class DuplicateEdge(DataError):
    pass


class SelfLoop(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class NegativeWeight(DataError):
    pass


class ConnectivityFailure(NumericError):
    pass


# basis
class InvalidDimension(DataError):
    pass


class OutOfDomain(DataError):
    pass


class BasisMismatch(DataError):
    pass


class RankDeficient(NumericError):
    pass


# model
class NonpositiveBandwidth(DataError):
    pass


class UncoveredVertex(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingBlock(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class SingularSystem(NumericError):
    pass


class DegenerateVariance(NumericError):
    pass


class AllFitsFailed(NumericError):
    pass


# conformal
class EmptySide(DataError):
    pass


class GridMismatch(DataError):
    pass


class EmptyScores(DataError):
    pass


class LengthMismatch(DataError):
    pass


# simulation
class InvalidCombination(DataError):
    pass


# ingestion
class EmptyRange(DataError):
    pass


class InsufficientNeighbors(DataError):
    pass


class InvalidProbability(DataError):
    pass


# files
class FormatError(DataError):
    """Malformed or unsupported file contents."""
