"""
Data models for the FSI laboratory: parameters, run configuration, reports
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Dict, Any, Literal
from datetime import datetime
from enum import Enum

class BodyKind(str, Enum):
    """Shape families of the rigid body"""
    DISK = "disk"
    ELLIPSE = "ellipse"
    SPHERE = "sphere"
    ELLIPSOID = "ellipsoid"
    POLYFILE = "polyfile"

class ThresholdKind(str, Enum):
    """Energy thresholds"""
    LAMBDA1 = "lambda1"
    LAMBDA2 = "lambda2"

class EigenMethod(str, Enum):
    """Eigen-solver selection"""
    AUTO = "auto"
    DENSE = "dense"
    ITERATIVE = "iterative"

class Verdict(str, Enum):
    """Outcome of a bifurcation certification"""
    CERTIFIED = "bifurcation point certified (numerically)"
    TRANSVERSALITY_UNRESOLVED = "candidate, transversality unresolved"
    MULTIPLE_EIGENVALUE = "multiple eigenvalue, outside simple-crossing scope"
    RANGE_SOLVABLE = "candidate, range condition solvable (eigenvalue not simple)"
    NO_CANDIDATE = "no candidate"

class PhysicalParams(BaseModel):
    """Dimensional data of the fluid-body system"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    V: float = Field(gt=0, description="stream speed")
    L: float = Field(gt=0, description="body diameter")
    nu: float = Field(gt=0, description="kinematic viscosity")
    rho: float = Field(gt=0, description="fluid density")
    M: float = Field(gt=0, description="body mass")
    ell: float = Field(gt=0, description="spring stiffness")

class NondimParams(BaseModel):
    """Reynolds number, squared natural frequency and mass ratio"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    lam: float = Field(default=0.0, ge=0)
    omega_n2: float = Field(default=1.0, gt=0)
    varpi: float = Field(default=1.0, gt=0)

    def with_lambda(self, lam: float) -> "NondimParams":
        return NondimParams(lam=lam, omega_n2=self.omega_n2, varpi=self.varpi)

# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class StrictModel(BaseModel):
    """Config section rejecting unknown keys"""
    model_config = ConfigDict(extra="forbid")

class BodySection(StrictModel):
    kind: BodyKind = BodyKind.DISK
    semi_axes: List[float] = Field(default_factory=lambda: [0.5])
    poly_file: Optional[str] = None
    symmetric: bool = True

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, v: List[float]) -> List[float]:
        if not v or any(a <= 0 for a in v):
            raise ValueError("semi_axes must be a non-empty list of positive lengths")
        return v

class MeshSection(StrictModel):
    R: float = Field(default=8.0, gt=0)
    h: float = Field(default=0.125, gt=0)
    dimension: Literal[2, 3] = 2
    velocity_degree: int = 2
    refinements: int = Field(default=0, ge=0)

class ParamsSection(StrictModel):
    omega_n2: float = Field(default=1.0, gt=0)
    varpi: float = Field(default=1.0, gt=0)

class SweepSection(StrictModel):
    lambdas: List[float] = Field(default_factory=lambda: [0.0])

    @field_validator("lambdas")
    @classmethod
    def _increasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("lambdas must not be empty")
        if any(l < 0 for l in v):
            raise ValueError("lambdas must be nonnegative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("lambdas must be strictly increasing")
        return v

class SolverSection(StrictModel):
    """Unset values fall back to the environment settings"""
    newton_tol: Optional[float] = Field(default=None, gt=0)
    newton_max_iter: Optional[int] = Field(default=None, gt=0)
    max_bisections: Optional[int] = Field(default=None, ge=0)
    eig_tol: Optional[float] = Field(default=None, gt=0)
    dense_limit: Optional[int] = Field(default=None, gt=0)

class ThresholdsSection(StrictModel):
    branch_dir: Optional[str] = None
    base_flow: Literal["steady", "zero"] = "steady"
    method: EigenMethod = EigenMethod.AUTO

class ModesSection(StrictModel):
    count: int = Field(default=20, gt=0)
    method: EigenMethod = EigenMethod.AUTO

class TransientSection(StrictModel):
    lam: float = Field(default=0.05, ge=0)
    t_end: float = Field(default=50.0, gt=0)
    dt: float = Field(default=0.1, gt=0)
    modes: int = Field(default=40, gt=0)
    integrator: Literal["monolithic", "galerkin", "both"] = "monolithic"
    initial_data: Literal["lowest-mode", "random-smooth", "rigid-kick"] = "random-smooth"
    epsilon: Optional[float] = Field(default=None, ge=0)
    epsilon_fraction: float = Field(default=0.1, gt=0)
    gronwall_a: float = Field(default=0.5, ge=0)
    gronwall_b: float = Field(default=0.5, ge=0)
    gronwall_alpha: float = Field(default=3.0, ge=1)
    energy_tol: float = Field(default=1e-8, gt=0)
    decay_time: float = Field(default=50.0, gt=0)
    snapshot_every: int = Field(default=0, ge=0)

class BifurcationSection(StrictModel):
    lambda_min: float = Field(default=0.0, ge=0)
    lambda_max: float = Field(default=1.0, gt=0)
    samples: int = Field(default=9, ge=2)
    frozen: bool = False
    frozen_lambda: Optional[float] = Field(default=None, ge=0)
    cross_tol: float = Field(default=1e-6, gt=0)
    cluster_tol: float = Field(default=1e-6, gt=0)
    range_tol: float = Field(default=1e-3, gt=0)
    fd_step: float = Field(default=1e-3, gt=0)
    method: EigenMethod = EigenMethod.AUTO

    @model_validator(mode="after")
    def _window(self) -> "BifurcationSection":
        if self.lambda_min >= self.lambda_max:
            raise ValueError(f"lambda_min ({self.lambda_min}) must be below lambda_max ({self.lambda_max})")
        return self

class OutputSection(StrictModel):
    directory: str = "runs"
    plots: bool = True

class RunConfig(StrictModel):
    """Validated run configuration"""
    body: BodySection = Field(default_factory=BodySection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    params: Optional[ParamsSection] = None
    physical: Optional[PhysicalParams] = None
    sweep: SweepSection = Field(default_factory=SweepSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    thresholds: ThresholdsSection = Field(default_factory=ThresholdsSection)
    modes: ModesSection = Field(default_factory=ModesSection)
    transient: TransientSection = Field(default_factory=TransientSection)
    bifurcation: BifurcationSection = Field(default_factory=BifurcationSection)
    output: OutputSection = Field(default_factory=OutputSection)
    seed: int = 0

    @model_validator(mode="after")
    def _one_parameter_source(self) -> "RunConfig":
        if self.params is not None and self.physical is not None:
            raise ValueError("give either [params] or [physical], not both")
        return self

# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class MeshQuality(BaseModel):
    """Geometric diagnostics of a mesh"""
    dimension: int
    num_vertices: int
    num_cells: int
    min_cell_measure: float
    max_cell_measure: float
    body_facets: int
    outer_facets: int
    body_measure: float
    outer_measure: float
    max_body_distance: float
    max_outer_distance: float

class SanityReport(BaseModel):
    """Discrete embedding constants of the coupled space"""
    kappa0: float
    kappa0_exponent: int
    kappa1: float
    samples: int

class ExtrapolationResult(BaseModel):
    """Richardson extrapolation in the truncation radius"""
    value: float
    order: float
    coefficient: float
    radii: List[float]
    values: List[float]

class GronwallBound(BaseModel):
    M: float
    delta_max: float

class ModeReport(BaseModel):
    """Consistency checks of a modal basis"""
    gram_residual: float
    stiffness_residual: float
    pde_residuals: List[float]
    rigid_coupling_residuals: List[float]
    sorted_ascending: bool
    positive: bool
    thresholds: Dict[str, float]
    failures: List[str] = []
    passed: bool

class EnergyReport(BaseModel):
    """Energy-inequality monitor of a trajectory"""
    lam: float
    lambda2: Optional[float] = None  # None encodes +inf
    gamma: float
    margin_positive: bool
    tolerance: float
    steps: int
    violations: List[int] = []
    max_excess: float
    monotone: bool
    dissipation_integral: float
    initial_metric: float
    final_metric: float
    final_grad_norm: float
    final_chi: float
    final_sigma: float
    decay_ratio: float
    no_oscillation: bool
    passed: bool

class TransversalityResult(BaseModel):
    """Finite-difference derivative of the eigenvalue path at a crossing"""
    lambda_s: float
    step: float
    coarse: float
    fine: float
    mu_prime: float
    crossing_slope: float
    noise: float
    nonzero: bool

class SimplicityResult(BaseModel):
    lambda_s: float
    kernel_dimension: int
    cluster_tol: float
    range_residual: float
    range_tol: float
    range_unsolvable: bool
    dense: bool
    simple: bool

class BifurcationReport(BaseModel):
    """Verdict on one crossing of the eigenvalue path"""
    lambda_s: Optional[float] = None
    mu_residual: Optional[float] = None
    kernel_dimension: Optional[int] = None
    simplicity: Optional[SimplicityResult] = None
    transversality: Optional[TransversalityResult] = None
    transversality_error: Optional[str] = None
    failed_conditions: List[str] = []
    verdict: Verdict
    thresholds: Dict[str, float] = {}

class FileRecord(BaseModel):
    path: str
    sha256: str

class RunManifest(BaseModel):
    """Inventory of a CLI run"""
    command: str
    config_hash: str
    version: str
    seed: int
    created_at: datetime
    timings: Dict[str, float] = {}
    files: List[FileRecord] = []
    monitors: Dict[str, bool] = {}
    details: Dict[str, Any] = {}
