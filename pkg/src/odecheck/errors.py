"""Exception hierarchy. Everything raised on purpose derives from OdeCheckError."""


class OdeCheckError(Exception):
    """Base class for computation errors (CLI exit code 2)."""


class GridError(OdeCheckError, ValueError):
    pass


class NonFiniteState(OdeCheckError, FloatingPointError):
    pass


class OutOfRange(OdeCheckError, ValueError):
    pass


class BandwidthError(OdeCheckError, ValueError):
    pass


class DegenerateWindow(OdeCheckError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class InsufficientData(OdeCheckError, ValueError):
    pass


class NoConvergence(OdeCheckError):
    pass


class SingularSigma(OdeCheckError, ArithmeticError):
    pass


class ZeroDenominator(OdeCheckError, ArithmeticError):
    pass


class ZeroVariance(OdeCheckError, ArithmeticError):
    pass


class QuadratureError(OdeCheckError):
    pass


class ParseError(OdeCheckError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(OdeCheckError, ValueError):
    pass
