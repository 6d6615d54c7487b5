"""
Exception hierarchy for the free-boundary laboratory
"""


class FreeBoundaryLabError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(FreeBoundaryLabError):
    """Invalid run configuration or grid/model mismatch"""


class SchemaError(FreeBoundaryLabError):
    """Serialized artifact does not match the expected schema"""


class ArtifactNotFoundError(FreeBoundaryLabError):
    """A required input artifact is missing"""


class DomainError(FreeBoundaryLabError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class StructuralError(FreeBoundaryLabError):
    """The nonlinearity violates its structural hypotheses numerically"""


class SolverError(FreeBoundaryLabError):
    """Base class for numerical solver failures"""


class LinearSolverError(SolverError):
    """Conjugate gradients did not reach the requested residual"""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class MountainPassError(SolverError):
    """Path deformation stagnated or produced a trivial critical point"""

    def __init__(self, message: str, best_field=None, level: float = float("nan"),
                 gradient_norm: float = float("nan")):
        super().__init__(message)
        self.best_field = best_field
        self.level = level
        self.gradient_norm = gradient_norm


class ContinuationError(SolverError):
    """Damped Newton continuation failed at the current epsilon"""

    def __init__(self, message: str, field=None, residual: float = float("nan")):
        super().__init__(message)
        self.field = field
        self.residual = residual
