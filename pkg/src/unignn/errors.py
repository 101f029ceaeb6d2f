"""Exception hierarchy.

``InputError`` subclasses map to CLI exit code 2, ``NumericalError``
subclasses to exit code 3.
"""


class UniGNNError(Exception):
    """Base class for every error raised by this package."""


class InputError(UniGNNError, ValueError):
    pass


class NumericalError(UniGNNError, ArithmeticError):
    pass


# hypergraph construction
class NoVertices(InputError):
    pass


class EmptyEdge(InputError):
    pass


class VertexIdOutOfRange(InputError):
    pass


class EmptyVisibleSet(InputError):
    pass


class NotABijection(InputError):
    pass


# engine
class ShapeMismatch(InputError):
    pass


class EmptyGroup(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


class InvalidProbability(InputError):
    pass


class EmptyMask(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class NonScalarLoss(InputError):
    pass


class NonFiniteError(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


# models / data
class DimensionMismatch(InputError):
    pass


class SchemaError(InputError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantViolation(InputError):
    pass


class TooLargeForBruteForce(InputError):
    pass
