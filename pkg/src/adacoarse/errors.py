"""Exception types raised across the package."""


class MeshError(ValueError):
    """Raised for unparsable or invalid geometry."""

    def __init__(self, message, element=None):
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)
        self.element = element


class InfeasibleStateError(ValueError):
    """A vertex reached or crossed a contact plane."""


class SolverError(RuntimeError):
    """Base class for linear and nonlinear solver failures."""


class IllConditionedError(SolverError):
    """A diagonal block of the system could not be inverted."""

    def __init__(self, node):
        super().__init__(f"singular diagonal block at node {node}")
        self.node = node


class IndefiniteMatrixError(SolverError):
    """PCG met a direction with non-positive curvature."""


class NumericalBreakdownError(SolverError):
    """NaN or Inf appeared during an iterative solve."""


class LineSearchError(SolverError):
    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class NewtonConvergenceError(SolverError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or []
