"""Exception types shared across the package."""


class OrthantError(Exception):
    """Base class for all package-specific errors."""


# --- expression module ---

class ExprError(OrthantError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownVariable(ExprError):
    pass


class UnknownFunction(ExprError):
    pass


class UnboundVariable(ExprError):
    pass


class DomainError(ExprError):
    """log/sqrt of a negative number or division by zero at eval time."""


# --- model validation ---

class ModelError(OrthantError):
    pass


class NonPositiveDefinite(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class BadScalar(ModelError):
    pass


# --- path simulation ---

class NegativeStart(OrthantError):
    pass


class LengthMismatch(OrthantError):
    pass


# --- densities / quadrature ---

class Divergent(OrthantError):
    """Exponential local-time moment too large for the requested coefficient."""


class NearSingular(OrthantError):
    """Time increment too small for a stable numerical s-derivative."""


class QuadratureBudgetExceeded(OrthantError):
    pass


# --- oracle / harness ---

class ProbeOutOfDomain(OrthantError):
    pass


class LinearSolveFailure(OrthantError):
    pass


class NaNDetected(OrthantError):
    pass


class ConfigParseError(OrthantError):
    pass


class ConfigValidationError(OrthantError):
    def __init__(self, field, message=""):
        super().__init__(f"invalid config field {field!r}: {message}")
        self.field = field
