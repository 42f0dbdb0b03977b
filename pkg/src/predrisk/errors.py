"""Exception hierarchy shared by every module."""


class PredRiskError(Exception):
    """Base class for all library errors."""


# scene
class MissingVehicle(PredRiskError, KeyError):
    pass


class InvalidPose(PredRiskError, ValueError):
    pass


# data pipeline
class ParseError(PredRiskError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidValue(PredRiskError, ValueError):
    pass


class FormatError(PredRiskError, ValueError):
    pass


class InvalidParameter(PredRiskError, ValueError):
    pass


class ResampleError(PredRiskError, ValueError):
    pass


class InsufficientData(PredRiskError, ValueError):
    pass


# tensor engine / predictor / training
class ShapeError(PredRiskError, ValueError):
    pass


class NotScalar(PredRiskError, ValueError):
    pass


class NumericalError(PredRiskError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class InvalidParams(PredRiskError, ValueError):
    pass


# motion planning
class InvalidHorizon(PredRiskError, ValueError):
    pass


class SplineError(PredRiskError, ArithmeticError):
    pass


class OutOfHorizon(PredRiskError, ValueError):
    pass


# risk
class InvalidAxis(PredRiskError, ValueError):
    pass


class GridError(PredRiskError, ValueError):
    pass
