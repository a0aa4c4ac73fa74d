"""Exception hierarchy.

Two families matter to the CLI: ``ValidationError`` (bad inputs, exit code 1)
and ``NumericalError`` (the math broke down, exit code 2).
"""


class DexfitError(Exception):
    pass


class ValidationError(DexfitError, ValueError):
    pass


class NumericalError(DexfitError, ArithmeticError):
    pass


class NotARotation(ValidationError):
    pass


class DegenerateMatrix(NumericalError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class BehindCamera(NumericalError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class UnknownConvention(ValidationError):
    pass


class ConventionMismatch(ValidationError):
    pass


class KindMismatch(ValidationError):
    pass


class RegionMismatch(ValidationError):
    pass


class NotScalar(ValidationError):
    pass


class NonFiniteValue(NumericalError):
    def __init__(self, message, node_id=None, op=None):
        super().__init__(message)
        self.node_id = node_id
        self.op = op


class DivergedTraining(NumericalError):
    pass


class LineSearchFailed(NumericalError):
    pass
