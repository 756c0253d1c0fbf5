"""Exception hierarchy shared by every powvar module."""


class PowvarError(Exception):
    """Base class for all errors raised by powvar."""


class DomainError(PowvarError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class QuadratureError(PowvarError, ArithmeticError):
    """A quadrature rule failed to converge after maximum refinement."""

    def __init__(self, message, last_values=None):
        super().__init__(message)
        self.last_values = last_values


class NotPSDError(PowvarError, ArithmeticError):
    def __init__(self, message, worst_eigenvalue=None):
        super().__init__(message)
        self.worst_eigenvalue = worst_eigenvalue


class SimulationError(PowvarError, ArithmeticError):
    pass


class AlignmentError(DomainError):
    """A lag is not an exact integer multiple of the grid step."""


class InfiniteMomentError(PowvarError, ArithmeticError):
    pass


class ConfigError(PowvarError):
    def __init__(self, message, field=None, line=None):
        loc = ""
        if field is not None:
            loc += f" [field {field}]"
        if line is not None:
            loc += f" [line {line}]"
        super().__init__(message + loc)
        self.field = field
        self.line = line
