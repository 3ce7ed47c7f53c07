"""
Error types raised by the FSI laboratory
"""

from typing import Any, List, Optional, Tuple


class FsiLabError(Exception):
    """Base class for all solver and pipeline errors"""


class ConfigurationError(FsiLabError):
    """Invalid or missing run configuration"""


# Geometry
class EmptyDomain(FsiLabError):
    """The truncation ball does not contain the body"""


class MeshFailure(FsiLabError):
    """The mesh generator produced an invalid mesh"""


# Discretization
class UnsupportedDegree(FsiLabError):
    """Requested velocity degree is not available"""


class QuadratureFailure(FsiLabError):
    """Degenerate cell met during assembly"""


class SaddleSolveFailure(FsiLabError):
    """Factorization or solve of a saddle-point system failed"""


class LinearSolveFailure(SaddleSolveFailure):
    """Linear solve inside a nonlinear or time-stepping loop failed"""


class EigSolveFailure(FsiLabError):
    """Eigen-solver did not converge or returned unusable output"""


# Steady
class NewtonDiverged(FsiLabError):
    """Newton iteration failed to reach tolerance"""

    def __init__(self, message: str, last_iterate: Any = None, residual: float = float("nan")):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ContinuationStalled(FsiLabError):
    """Natural continuation could not advance past a parameter value"""

    def __init__(self, message: str, last_lambda: float, trace: Optional[List[Tuple[float, str]]] = None,
                 partial: Any = None):
        super().__init__(message)
        self.last_lambda = last_lambda
        self.trace = trace or []
        # Branch of the states converged before the stall
        self.partial = partial


class IllConditionedFit(FsiLabError):
    """Radius extrapolation data are not monotone"""


# Thresholds / modal / transient / bifurcation
class NonConvergedState(FsiLabError):
    """Steady state residual above tolerance"""


class BasisMismatch(FsiLabError):
    """Modal basis and data live on different spaces"""


class TensorTooLarge(FsiLabError):
    """Galerkin tensor would exceed the storage cap"""


class StepperDiverged(FsiLabError):
    """Time step failed after all step reductions"""


class PathJump(FsiLabError):
    """Eigenvector overlap between consecutive samples fell below threshold"""


class InvalidEigenvector(FsiLabError):
    """Zero or non-finite eigenvector supplied"""


class FDInconclusive(FsiLabError):
    """Finite-difference stencils disagree"""

    def __init__(self, message: str, coarse: float = float("nan"), fine: float = float("nan")):
        super().__init__(message)
        self.coarse = coarse
        self.fine = fine


# Output
class NonFiniteOutput(FsiLabError):
    """A NaN was about to be written"""


class OrderingViolation(FsiLabError):
    """Computed thresholds violate lambda2 <= lambda1"""


class ClusterWarning(UserWarning):
    """Numerically repeated eigenvalues in a modal basis"""
