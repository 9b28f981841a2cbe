"""Exception hierarchy shared by every module of the package."""


class QuantizationError(Exception):
    """Base class for all errors raised by mpquant."""


class DomainError(QuantizationError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class CapacityExceeded(QuantizationError):
    """A grid, rule or matrix would exceed its configured size cap."""


class DimensionMismatch(QuantizationError, ValueError):
    pass


class ModelDomainError(QuantizationError, ValueError):
    """A diffusion model rejected a state outside its admissible domain."""


class MissingParameter(QuantizationError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing parameter"


class InvalidParameter(QuantizationError, ValueError):
    pass


class DegenerateRow(QuantizationError):
    pass


class NonConvergence(QuantizationError):
    """The marginal optimizer exhausted its iteration budget.

    Carries the best grid found (``points``) and its gradient residual so
    callers can decide whether the result is still usable.
    """

    def __init__(self, message, points=None, residual=None, context=None):
        super().__init__(message)
        self.points = points
        self.residual = residual
        self.context = dict(context or {})

    def __str__(self):
        base = super().__str__()
        if self.context:
            ctx = ", ".join(f"{k}={v}" for k, v in self.context.items())
            return f"{base} ({ctx})"
        return base


class NotDiagonal(QuantizationError, ValueError):
    pass


class NotApplicable(QuantizationError, ValueError):
    pass


class ZeroConditioningMass(QuantizationError, ZeroDivisionError):
    pass


class ConfigError(QuantizationError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    """Collects every violation found while validating a configuration."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
