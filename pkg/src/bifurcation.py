"""
Steady bifurcation candidates of the branch of steady states

The linearization about u0(lambda) on the pinned space gives the pencil

    K(lambda) x = mu A x  on ker B,
    K(lambda) = lambda (D1 - P^T N(u0) P - P^T C(u0) P),

and a candidate lambda_s is a point where an eigenvalue mu(lambda) crosses 1.
Candidates are certified by a simplicity check (one-dimensional kernel and an
unsolvable range equation) and a transversality check (finite-difference
derivative of mu along the path).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse

from .config import settings
from .discretization import FsiSpace, OperatorSet, assemble
from .eigen import Constraint, left_vector, nearest_eigenvalues, use_dense
from .exceptions import FDInconclusive, InvalidEigenvector, PathJump
from .models import (
    BifurcationReport,
    EigenMethod,
    NondimParams,
    SimplicityResult,
    TransversalityResult,
    Verdict,
)
from .saddle import SaddleSystem
from .steady import Branch, SteadyState, solve_steady

logger = logging.getLogger(__name__)

COMPLEX_TOL = 1e-8
OVERLAP_MIN = 0.5
NO_CANDIDATE = "no candidate"
COMPLEX_PAIR = "complex pair - steady-bifurcation test inapplicable"
PATH_JUMP = "path jump"

@dataclass(frozen=True, eq=False)
class Pencil:
    """K x = mu A x, constrained to ker B when B is given"""
    K: object
    A: object
    B: Optional[sparse.spmatrix] = None
    m: Optional[np.ndarray] = None

    @property
    def constraint(self) -> Constraint:
        return Constraint(B=self.B, m=self.m)

    @property
    def n(self) -> int:
        return self.K.shape[0]

def linearized_pencil(opset: OperatorSet, u0_full: np.ndarray, lam: float) -> Pencil:
    K = opset.D1s - opset.linearized_advection(u0_full, relative=True)
    return Pencil(K=(lam * K).tocsr(), A=opset.A, B=opset.B, m=opset.pressure_mean)

# ---------------------------------------------------------------------------
# Base flows
# ---------------------------------------------------------------------------

class FrozenBaseFlow:
    """lambda-independent base flow; the eigenvalue path is exactly linear in lambda"""

    def __init__(self, u0_full: np.ndarray):
        self.u0 = np.asarray(u0_full, dtype=float)

    def __call__(self, lam: float) -> np.ndarray:
        return self.u0

class BranchBaseFlow:
    """Steady state at lambda, from the branch or a fresh solve warm-started at the nearest state"""

    def __init__(self, branch: Branch, space: FsiSpace, params: NondimParams):
        if not branch.states:
            raise ValueError("empty branch")
        self.branch = branch
        self.space = space
        self.params = params
        self._cache: Dict[float, np.ndarray] = {s.lam: s.u_full for s in branch.states}

    def state(self, lam: float) -> SteadyState:
        init = self.branch.nearest(lam)
        if init.lam == lam:
            return init
        return solve_steady(self.space, self.params.with_lambda(lam), init=init, opset=init.opset)

    def __call__(self, lam: float) -> np.ndarray:
        if lam not in self._cache:
            self._cache[lam] = self.state(lam).u_full
        return self._cache[lam]

# ---------------------------------------------------------------------------
# Eigenvalue path
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PathSample:
    lam: float
    mu: complex
    cluster: np.ndarray
    right: Optional[np.ndarray] = field(default=None, repr=False)
    left: Optional[np.ndarray] = field(default=None, repr=False)
    pairing: float = math.nan
    adjoint_residual: float = math.nan
    chi: Optional[np.ndarray] = None
    overlap: Optional[float] = None
    flags: List[str] = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return NO_CANDIDATE not in self.flags and COMPLEX_PAIR not in self.flags

@dataclass
class EigenPath:
    samples: List[PathSample] = field(default_factory=list)

    @property
    def lambdas(self) -> List[float]:
        return [s.lam for s in self.samples]

    @property
    def mu(self) -> np.ndarray:
        return np.array([s.mu for s in self.samples])

    def __len__(self) -> int:
        return len(self.samples)

def _phase_normalized(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    v = v * (abs(v[i]) / v[i]) if v[i] != 0 else v
    return np.real(v)

class PathEvaluator:
    """Eigen-solves of the linearized pencil at any lambda, for one base flow"""

    def __init__(self, opset: OperatorSet, base_flow: Callable[[float], np.ndarray],
                 method: EigenMethod = EigenMethod.AUTO, k: int = 6, target: float = 1.0,
                 tol: Optional[float] = None, seed: int = 0):
        self.opset = opset
        self.base_flow = base_flow
        self.method = method
        self.k = k
        self.target = target
        self.tol = tol or settings.EIG_TOL
        self.seed = seed
        self._projector: Optional[SaddleSystem] = None

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_projector"] = None
        return state

    @property
    def projector(self) -> SaddleSystem:
        if self._projector is None:
            identity = sparse.identity(self.opset.space.n_dofs, format="csr")
            self._projector = SaddleSystem(identity, self.opset.B, self.opset.pressure_mean)
        return self._projector

    def pencil(self, lam: float) -> Pencil:
        return linearized_pencil(self.opset, self.base_flow(lam), lam)

    def _eigs(self, pencil: Pencil):
        n_c = pencil.constraint.dimension(pencil.n)
        return nearest_eigenvalues(pencil.K, pencil.A, pencil.constraint, self.target,
                                   k=min(self.k, max(n_c - 2, 1)), method=self.method,
                                   tol=self.tol, seed=self.seed)

    def __call__(self, lam: float) -> float:
        """Real part of the eigenvalue nearest the target"""
        if lam == 0:
            return 0.0
        w, _, _ = self._eigs(self.pencil(lam))
        return float(np.real(w[0]))

    def elongation(self, lam: float, mu: float, x: np.ndarray) -> np.ndarray:
        """chi from omega_n^2 chi = -varpi * traction of the eigenfunction and its pressure"""
        opset = self.opset
        space = opset.space
        params = opset.params
        u0 = self.base_flow(lam)
        pencil_x = self.pencil(lam).K @ x
        _, q = self.projector.solve(mu * (opset.A @ x) - pencil_x)
        u = space.full(x)
        K_full = lam * (opset.stream_full - opset.advection(u0) - opset.advection_of(u0))
        traction = opset.traction(mu * u, -q, 0.0, load=K_full @ u)
        return -(params.varpi / params.omega_n2) * traction

    def sample(self, lam: float) -> PathSample:
        if lam == 0:
            return PathSample(lam=0.0, mu=0.0, cluster=np.zeros(1), flags=[NO_CANDIDATE])
        pencil = self.pencil(lam)
        w, V, Wl = self._eigs(pencil)
        mu = complex(w[0])
        s = PathSample(lam=lam, mu=mu, cluster=np.asarray(w))
        if abs(mu.imag) >= COMPLEX_TOL * abs(mu):
            s.flags.append(COMPLEX_PAIR)
            logger.warning(f"Eigenvalue nearest {self.target} at lambda={lam} is complex: {mu}")
            return s

        M = self.opset.M_w
        right = _phase_normalized(V[:, 0])
        right /= math.sqrt(right @ (M @ right))
        if Wl is not None:
            left = _phase_normalized(Wl[:, 0])
        else:
            left = left_vector(pencil.K, pencil.A, pencil.constraint, mu.real, right)
        pairing = float(left @ (pencil.A @ right))
        if pairing == 0.0:
            s.flags.append("zero adjoint pairing")
            s.right = right
            s.mu = complex(mu.real, 0.0)
            return s
        left = left / pairing
        a_pair = float(left @ (pencil.A @ right))
        k_pair = float(left @ (pencil.K @ right))
        # two-sided Rayleigh quotient
        mu_ref = k_pair / a_pair
        s.mu = complex(mu_ref, 0.0)
        s.right, s.left = right, left
        s.pairing = a_pair
        s.adjoint_residual = abs(k_pair - mu_ref * a_pair) / max(abs(mu_ref * a_pair), 1e-300)
        s.chi = self.elongation(lam, mu_ref, right)
        logger.debug(f"path sample lambda={lam}: mu={mu_ref:.12g}")
        return s

def _link(path: EigenPath, M, strict: bool):
    prev = None
    for s in path.samples:
        if s.right is None:
            prev = None
            continue
        if prev is not None:
            s.overlap = float(abs(prev.right @ (M @ s.right)))
            if s.overlap < OVERLAP_MIN:
                s.flags.append(PATH_JUMP)
                logger.warning(f"Eigenvector overlap {s.overlap:.3f} between lambda={prev.lam} and {s.lam}")
                if strict:
                    raise PathJump(f"overlap {s.overlap:.3f} < {OVERLAP_MIN} between lambda={prev.lam} and {s.lam}")
        prev = s

def trace_path(evaluator: PathEvaluator, lambdas: Sequence[float], strict: bool = False,
               jobs: int = 1) -> EigenPath:
    """Sample the eigenvalue nearest the target at every lambda, in increasing order"""
    lambdas = sorted(float(l) for l in lambdas)
    if jobs > 1 and len(lambdas) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(evaluator.sample, lambdas))
    else:
        samples = [evaluator.sample(l) for l in lambdas]
    path = EigenPath(samples=samples)
    _link(path, evaluator.opset.M_w, strict)
    logger.info(f"Traced eigenvalue path over {len(path)} samples in [{lambdas[0]}, {lambdas[-1]}]")
    return path

def linearized_eigenpath(branch: Branch, space_pinned: FsiSpace, params: NondimParams,
                         lambdas: Sequence[float], base_flow: Optional[Callable[[float], np.ndarray]] = None,
                         method: EigenMethod = EigenMethod.AUTO, k: int = 6, strict: bool = False,
                         jobs: int = 1, opset: Optional[OperatorSet] = None) -> EigenPath:
    """
    Eigenvalue path of the linearized steady problem over a lambda window.

    Raises:
        EigSolveFailure: if an eigen-solve fails
        PathJump: in strict mode, when consecutive eigenvectors overlap by less than 0.5
    """
    if not space_pinned.pinned:
        raise ValueError("the linearized pencil is posed on the pinned space")
    if opset is None:
        first = branch.states[0] if branch.states else None
        opset = first.opset if first is not None and first.space is space_pinned else assemble(space_pinned, params)
    base_flow = base_flow or BranchBaseFlow(branch, space_pinned, params)
    return trace_path(PathEvaluator(opset, base_flow, method=method, k=k), lambdas, strict=strict, jobs=jobs)

# ---------------------------------------------------------------------------
# Crossings
# ---------------------------------------------------------------------------

def _refine(f: Callable[[float], float], a: float, fa: float, b: float, fb: float,
            tol: float, max_iter: int) -> Tuple[float, float]:
    """Illinois-modified secant (regula falsi) on a sign change of f"""
    c, fc = b, fb
    for _ in range(max_iter):
        c = b - fb * (b - a) / (fb - fa)
        fc = f(c)
        if abs(fc) < tol:
            break
        if fc * fb < 0:
            a, fa = b, fb
        else:
            fa *= 0.5
        b, fb = c, fc
    return c, fc

def detect_crossing(path: EigenPath, evaluator: Optional[Callable[[float], float]] = None,
                    tol: float = 1e-6, max_iter: int = 50, target: float = 1.0) -> List[float]:
    """
    Candidate lambda_s where the real eigenvalue path crosses the target.

    Each sign change of mu - target between usable samples is refined by
    secant steps on fresh evaluations (linear interpolation without an
    evaluator) until |mu - target| < tol.
    """
    usable = [s for s in path.samples if s.usable]
    candidates = []
    for s0, s1 in zip(usable, usable[1:]):
        f0, f1 = s0.mu.real - target, s1.mu.real - target
        if f1 == 0.0:
            candidates.append(s1.lam)
            continue
        if f0 * f1 >= 0:
            continue
        if evaluator is None:
            lam = s0.lam - f0 * (s1.lam - s0.lam) / (f1 - f0)
        else:
            lam, fl = _refine(lambda l: evaluator(l) - target, s0.lam, f0, s1.lam, f1, tol, max_iter)
            if abs(fl) >= tol:
                logger.warning(f"Crossing refinement near lambda={lam} stopped at |mu - 1| = {abs(fl):.2e}")
        candidates.append(float(lam))
        logger.info(f"Eigenvalue crossing detected at lambda_s = {lam:.10g}")
    return sorted(candidates)

def simplicity_check(lam_s: float, pencil: Pencil, W1: np.ndarray, mu: float = 1.0,
                     cluster_tol: float = 1e-6, range_tol: float = 1e-3,
                     method: EigenMethod = EigenMethod.AUTO, k: int = 6) -> SimplicityResult:
    """
    Kernel dimension by eigenvalue clustering plus the range condition.

    The range equation (mu A - K) W = A W1 on ker B must have no solution
    (relative least-squares residual above range_tol) for a simple eigenvalue.

    Raises:
        InvalidEigenvector: for a zero or non-finite W1
        EigSolveFailure: if an eigen-solve fails
    """
    W1 = np.asarray(W1)
    if W1.shape != (pencil.n,) or not np.all(np.isfinite(W1)) or not np.any(W1):
        raise InvalidEigenvector("eigenvector must be finite and non-zero")
    W1 = np.real(W1).astype(float)
    constraint = pencil.constraint
    n_c = constraint.dimension(pencil.n)
    w, _, _ = nearest_eigenvalues(pencil.K, pencil.A, constraint, mu, k=min(k, n_c), method=method)
    kernel_dim = int(np.sum(np.abs(w - mu) < cluster_tol * max(1.0, abs(mu))))

    AW = pencil.A @ W1
    dense = use_dense(n_c, method)
    if dense:
        Z = constraint.basis(pencil.n)
        S = mu * (pencil.A @ Z) - pencil.K @ Z
        S = Z.T @ (S.toarray() if sparse.issparse(S) else np.asarray(S))
        rhs = Z.T @ AW
        y, *_ = linalg.lstsq(S, rhs, cond=1e-8)
        residual = float(np.linalg.norm(S @ y - rhs) / max(np.linalg.norm(rhs), 1e-300))
    else:
        left = left_vector(pencil.K, pencil.A, constraint, mu, W1)
        if constraint.B is not None:
            identity = sparse.identity(pencil.n, format="csr")
            AW_proj, _ = SaddleSystem(identity, constraint.B, constraint.m).solve(AW)
        else:
            AW_proj = AW
        residual = float(abs(left @ AW_proj) / max(np.linalg.norm(left) * np.linalg.norm(AW_proj), 1e-300))

    unsolvable = residual > range_tol
    result = SimplicityResult(lambda_s=lam_s, kernel_dimension=kernel_dim, cluster_tol=cluster_tol,
                              range_residual=residual, range_tol=range_tol, range_unsolvable=unsolvable,
                              dense=dense, simple=kernel_dim == 1 and unsolvable)
    logger.info(f"Simplicity at lambda_s={lam_s}: kernel dim {kernel_dim}, range residual {residual:.3e}")
    return result

def transversality(lam_s: float, mu_of: Callable[[float], float], step: float = 1e-3,
                   eig_tol: Optional[float] = None) -> TransversalityResult:
    """
    Central differences of mu at lambda_s with steps delta and delta/2.

    mu_prime is the Richardson combination; crossing_slope = -mu_prime is the
    slope of the eigenvalue 1 - mu of the linearized steady operator.

    Raises:
        FDInconclusive: when the two stencils differ by more than 50%
    """
    eig_tol = eig_tol or settings.EIG_TOL
    delta = min(step, 0.25 * lam_s) if lam_s > 0 else step
    d1 = (mu_of(lam_s + delta) - mu_of(lam_s - delta)) / (2 * delta)
    d2 = (mu_of(lam_s + 0.5 * delta) - mu_of(lam_s - 0.5 * delta)) / delta
    scale = max(abs(d1), abs(d2))
    if scale > 0 and abs(d1 - d2) > 0.5 * scale:
        raise FDInconclusive(f"stencils disagree at lambda_s={lam_s}: {d1:.6g} vs {d2:.6g}", coarse=d1, fine=d2)
    noise = max(abs(d1 - d2), eig_tol / delta)
    mu_prime = (4 * d2 - d1) / 3
    result = TransversalityResult(lambda_s=lam_s, step=delta, coarse=d1, fine=d2, mu_prime=mu_prime,
                                  crossing_slope=-mu_prime, noise=noise, nonzero=abs(mu_prime) > 10 * noise)
    logger.info(f"Transversality at lambda_s={lam_s}: mu'={mu_prime:.10g} (noise {noise:.2e})")
    return result

def report(lam_s: Optional[float], mu_at: Optional[float] = None,
           simplicity: Optional[SimplicityResult] = None,
           transversal: Optional[TransversalityResult] = None,
           transversality_error: Optional[str] = None, cross_tol: float = 1e-6,
           thresholds: Optional[Dict[str, float]] = None) -> BifurcationReport:
    """Combine the checks into a verdict; failed conditions are listed"""
    thresholds = dict(thresholds or {})
    thresholds.setdefault("cross_tol", cross_tol)
    if lam_s is None:
        return BifurcationReport(verdict=Verdict.NO_CANDIDATE, failed_conditions=["no crossing in window"],
                                 thresholds=thresholds)
    mu_residual = abs(mu_at - 1.0) if mu_at is not None else None
    failed = []
    if mu_residual is None or mu_residual >= cross_tol:
        failed.append("mu(lambda_s) = 1 not reached")
        verdict = Verdict.NO_CANDIDATE
    elif simplicity is not None and simplicity.kernel_dimension > 1:
        failed.append("(i) eigenvalue not simple")
        verdict = Verdict.MULTIPLE_EIGENVALUE
    elif simplicity is None or not simplicity.range_unsolvable or simplicity.kernel_dimension != 1:
        failed.append("(ii) range condition solvable")
        verdict = Verdict.RANGE_SOLVABLE
    elif transversal is None or not transversal.nonzero:
        failed.append("(iii) transversality unresolved")
        verdict = Verdict.TRANSVERSALITY_UNRESOLVED
    else:
        verdict = Verdict.CERTIFIED
    if simplicity is not None:
        thresholds.setdefault("cluster_tol", simplicity.cluster_tol)
        thresholds.setdefault("range_tol", simplicity.range_tol)
    return BifurcationReport(
        lambda_s=lam_s, mu_residual=mu_residual,
        kernel_dimension=simplicity.kernel_dimension if simplicity else None,
        simplicity=simplicity, transversality=transversal, transversality_error=transversality_error,
        failed_conditions=failed, verdict=verdict, thresholds=thresholds,
    )

def certify(evaluator: PathEvaluator, path: EigenPath, cross_tol: float = 1e-6, cluster_tol: float = 1e-6,
            range_tol: float = 1e-3, fd_step: float = 1e-3) -> List[BifurcationReport]:
    """Detect crossings on a traced path and run all checks on each"""
    crossings = detect_crossing(path, evaluator, tol=cross_tol)
    if not crossings:
        return [report(None, cross_tol=cross_tol)]
    thresholds = {"cross_tol": cross_tol, "cluster_tol": cluster_tol, "range_tol": range_tol, "fd_step": fd_step}
    reports = []
    for lam_s in crossings:
        s = evaluator.sample(lam_s)
        if not s.usable or s.right is None:
            reports.append(report(lam_s, s.mu.real, cross_tol=cross_tol, thresholds=thresholds))
            continue
        simple = simplicity_check(lam_s, evaluator.pencil(lam_s), s.right, mu=s.mu.real,
                                  cluster_tol=cluster_tol, range_tol=range_tol, method=evaluator.method)
        trans, error = None, None
        try:
            trans = transversality(lam_s, evaluator, step=fd_step, eig_tol=evaluator.tol)
        except FDInconclusive as e:
            error = str(e)
            logger.warning(f"Transversality inconclusive at lambda_s={lam_s}: {e}")
        r = report(lam_s, s.mu.real, simple, trans, error, cross_tol=cross_tol, thresholds=thresholds)
        logger.info(f"lambda_s={lam_s:.10g}: {r.verdict.value}")
        reports.append(r)
    return reports
