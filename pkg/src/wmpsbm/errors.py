"""Exception hierarchy shared by all modules."""


class WmpError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(WmpError, ValueError):
    pass


class ZeroDegreeCommunity(WmpError):
    pass


class NonStochastic(WmpError):
    pass


class ComplexSpectrum(WmpError):
    pass


class WrongK(WmpError, ValueError):
    pass


class NotSymmetric(WmpError):
    pass


class NoConvergence(WmpError):
    pass


class ParseError(WmpError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownNode(WmpError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyBoundary(WmpError):
    pass


class DivergentEnergy(WmpError):
    pass


class NoBoundaryLabels(WmpError):
    pass


class DimensionMismatch(WmpError, ValueError):
    pass


class DomainError(WmpError, ValueError):
    pass


class TooLarge(WmpError):
    pass


class EmptyEvaluationSet(WmpError):
    pass


class DatasetMissing(WmpError, FileNotFoundError):
    pass
