"""Exception hierarchy shared across riemnet."""


class RiemnetError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(RiemnetError, ValueError):
    pass


class RankDeficient(RiemnetError, ArithmeticError):
    pass


class NotSymmetric(RiemnetError, ValueError):
    pass


class NotPositiveDefinite(RiemnetError, ArithmeticError):
    pass


class UnboundInput(RiemnetError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonScalarOutput(RiemnetError, ValueError):
    pass


class BackwardBeforeForward(RiemnetError, RuntimeError):
    pass


class IncompatibleShape(RiemnetError, ValueError):
    pass


class DegenerateShape(RiemnetError, ValueError):
    pass


class InvalidInitialValue(RiemnetError, ValueError):
    pass


class InvalidGeometry(RiemnetError, ValueError):
    pass


class MissingGradient(RiemnetError, RuntimeError):
    pass


class LineSearchFailed(RiemnetError, RuntimeError):
    pass


class ConfigError(RiemnetError):
    """Anything wrong with a run configuration (CLI exit code 2)."""


class ParseError(ConfigError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfigError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MalformedCsv(RiemnetError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class LabelOutOfRange(RiemnetError, ValueError):
    pass
