"""
Uniqueness and stability thresholds of a steady state

1/lambda1 and 1/lambda2 are the largest eigenvalues theta of the symmetric
pencil S(u0) x = theta G x on the discrete divergence-free subspace, where

    x^T S x = -((u - u_hat) . grad u0, u)   (weight from D(u0))
    x^T G x = ||grad u||^2

on the pinned space (u_hat = 0) for lambda1 and on the coupled space for
lambda2. Pinned fields form a subspace of coupled ones, so lambda2 <= lambda1.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import settings
from .discretization import FsiSpace, OperatorSet, assemble
from .eigen import Constraint, largest_symmetric, use_dense
from .exceptions import NonConvergedState
from .models import EigenMethod, NondimParams, ThresholdKind
from .steady import Branch, SteadyState, solve_steady

logger = logging.getLogger(__name__)

LAMBDA_TILDE_TOL = 1e-4

@dataclass(eq=False)
class ThresholdResult:
    """Extreme pencil eigenvalue theta and threshold value 1/theta (inf when theta <= 0)"""
    kind: ThresholdKind
    value: float
    theta: float
    maximizer: np.ndarray = field(repr=False)
    raw_quotient: float
    rayleigh_residual: float
    constrained_dimension: int
    dense: bool

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    @property
    def inverse(self) -> float:
        return 0.0 if not self.finite else 1.0 / self.value

@dataclass
class ThresholdRow:
    lam: float
    lambda1: float
    lambda2: float
    gamma: float
    theta_residual: float

@dataclass
class LambdaTilde:
    """Crossing of lambda1(lambda) = lambda with its bisection record"""
    value: float
    bracket: Tuple[float, float]
    evaluations: List[Tuple[float, float]]
    residual: float
    theta: Optional[float] = None

    @property
    def kernel_residual(self) -> Optional[float]:
        """|theta - 1/lambda_tilde| when the pencil value at the crossing is known"""
        return None if self.theta is None else abs(self.theta - 1.0 / self.value)

def _check_state(state: SteadyState, space: FsiSpace, tol: Optional[float]):
    tol = tol or settings.NEWTON_TOL
    if not state.residual <= tol:
        raise NonConvergedState(f"steady state at lambda={state.lam} has residual {state.residual:.3e} > {tol:.3e}")
    if state.u_full.shape != (space.dim * space.n_nodes,):
        raise ValueError("steady state and threshold space live on different meshes")

def _operators(state: SteadyState, space: FsiSpace, opset: Optional[OperatorSet]) -> OperatorSet:
    if opset is not None:
        return opset
    if state.space is space:
        return state.opset
    return assemble(space, state.opset.params)

def advection_weight(opset: OperatorSet, u0_full: np.ndarray):
    """
    Symmetric S with x^T S x = -((u - u_hat) . grad u0, u).

    The quadratic part -(u . grad u0, u) = -(D(u0) u, u) carries only the
    deformation tensor; the rigid cross term (u_hat . grad u0, u) is split
    evenly between the two off-diagonal blocks.
    """
    space = opset.space
    deformation = opset.reduce(opset.gradient_weight(u0_full, symmetric=True))
    cross = opset.reduce(opset.gradient_weight(u0_full), space.spread)
    S = -deformation + 0.5 * (cross + cross.T)
    return (0.5 * (S + S.T)).tocsr()

def raw_quotient(opset: OperatorSet, u0_full: np.ndarray, x: np.ndarray) -> float:
    """-((u - u_hat) . grad u0, u) / ||grad u||^2 by direct quadrature, no symmetrization"""
    space = opset.space
    u_full = space.full(x)
    w_full = space.relative @ x
    total = 0.0
    for sl in space.chunks():
        dphi, wdet = space.gradients(sl)
        u = space.evaluate(u_full, sl)
        w = space.evaluate(w_full, sl)
        grad_u0 = space.evaluate_gradient(u0_full, sl, dphi)
        total += float(np.einsum("cq,cqk,cql,cqkl->", wdet, u, w, grad_u0))
    return -total / float(x @ (opset.G @ x))

def _threshold(kind: ThresholdKind, state: SteadyState, space: FsiSpace, method: EigenMethod,
               opset: Optional[OperatorSet], tol: Optional[float], seed: int) -> ThresholdResult:
    _check_state(state, space, tol)
    opset = _operators(state, space, opset)
    constraint = Constraint.of(opset)
    n_c = constraint.dimension(space.n_dofs)
    S = advection_weight(opset, state.u_full)
    theta, x = largest_symmetric(S, opset.G, constraint, method=method, seed=seed)
    raw = raw_quotient(opset, state.u_full, x)
    residual = abs(raw - theta) / max(abs(theta), 1e-300) if theta != 0.0 else abs(raw)
    value = 1.0 / theta if theta > 0.0 else math.inf
    logger.info(f"{kind.value} at lambda={state.lam}: theta={theta:.12g}, value={value:.12g}, "
                f"raw quotient residual {residual:.2e}")
    return ThresholdResult(kind=kind, value=value, theta=theta, maximizer=x, raw_quotient=raw,
                           rayleigh_residual=residual, constrained_dimension=n_c,
                           dense=use_dense(n_c, method) or n_c < 8)

def lambda1(state: SteadyState, space_pinned: FsiSpace, method: EigenMethod = EigenMethod.AUTO,
            opset: Optional[OperatorSet] = None, tol: Optional[float] = None, seed: int = 0) -> ThresholdResult:
    """
    Uniqueness threshold of a steady state.

    Raises:
        NonConvergedState: if the state residual exceeds tol
        EigSolveFailure: if the pencil eigen-solve fails
    """
    if not space_pinned.pinned:
        raise ValueError("lambda1 is defined on the pinned space")
    return _threshold(ThresholdKind.LAMBDA1, state, space_pinned, method, opset, tol, seed)

def lambda2(state: SteadyState, space_unpinned: FsiSpace, method: EigenMethod = EigenMethod.AUTO,
            opset: Optional[OperatorSet] = None, tol: Optional[float] = None, seed: int = 0) -> ThresholdResult:
    """Stability threshold of a steady state; the rigid velocity is free"""
    if space_unpinned.pinned:
        raise ValueError("lambda2 is defined on the coupled (unpinned) space")
    return _threshold(ThresholdKind.LAMBDA2, state, space_unpinned, method, opset, tol, seed)

def stability_margin(lam: float, lambda2_value: float) -> float:
    """gamma = 1 - lambda / lambda2 (1 for an infinite threshold)"""
    if not math.isfinite(lambda2_value):
        return 1.0
    return 1.0 - lam / lambda2_value

def _row(args) -> ThresholdRow:
    state, space_pinned, space_unpinned, method, opset_unpinned = args
    t1 = lambda1(state, space_pinned, method)
    t2 = lambda2(state, space_unpinned, method, opset=opset_unpinned)
    return ThresholdRow(lam=state.lam, lambda1=t1.value, lambda2=t2.value,
                        gamma=stability_margin(state.lam, t2.value),
                        theta_residual=max(t1.rayleigh_residual, t2.rayleigh_residual))

def threshold_table(branch: Branch, space_pinned: FsiSpace, space_unpinned: FsiSpace,
                    method: EigenMethod = EigenMethod.AUTO, jobs: int = 1) -> List[ThresholdRow]:
    """lambda1, lambda2 and gamma for every state of a branch, in lambda order"""
    if not branch.states:
        return []
    opset_unpinned = assemble(space_unpinned, branch.states[0].opset.params)
    tasks = [(s, space_pinned, space_unpinned, method, opset_unpinned) for s in branch.states]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_row, tasks))
    else:
        rows = [_row(t) for t in tasks]
    return sorted(rows, key=lambda r: r.lam)

def find_lambda_tilde(branch: Branch, space_pinned: FsiSpace,
                      lambda1_of: Optional[Callable[[float], float]] = None,
                      tol: float = LAMBDA_TILDE_TOL, max_steps: int = 60,
                      method: EigenMethod = EigenMethod.AUTO) -> Optional[LambdaTilde]:
    """
    First lambda where f(lambda) = lambda - lambda1(lambda) changes sign.

    The branch supplies the coarse grid; the bracket is refined by bisection
    on fresh steady solves (or on lambda1_of when given) until |f| < tol.
    Returns None when f < 0 on the whole branch.
    """
    if lambda1_of is None:
        lambda1_of = _SteadyLambda1(branch, space_pinned, method)

    lambdas = branch.lambdas
    evaluations = [(lam, lambda1_of(lam)) for lam in lambdas]
    f = [lam - l1 for lam, l1 in evaluations]
    if f and f[0] >= 0:
        logger.warning(f"lambda - lambda1 is already nonnegative at lambda={lambdas[0]}; no crossing bracketed")
        return None
    crossing = next((i for i in range(1, len(f)) if f[i] >= 0), None)
    if crossing is None:
        logger.info("lambda1(lambda) stays above lambda on the whole branch")
        return None

    lo, hi = lambdas[crossing - 1], lambdas[crossing]
    mid, f_mid = hi, f[crossing]
    for _ in range(max_steps):
        if abs(f_mid) < tol:
            break
        mid = 0.5 * (lo + hi)
        l1 = lambda1_of(mid)
        evaluations.append((mid, l1))
        f_mid = mid - l1
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    theta = getattr(lambda1_of, "last_theta", None)
    logger.info(f"lambda_tilde = {mid:.10g} (|f| = {abs(f_mid):.2e}, bracket [{lo}, {hi}])")
    return LambdaTilde(value=mid, bracket=(lo, hi), evaluations=evaluations, residual=abs(f_mid), theta=theta)

class _SteadyLambda1:
    """lambda -> lambda1 of the steady state at lambda, warm-started from the nearest branch state"""

    def __init__(self, branch: Branch, space: FsiSpace, method: EigenMethod):
        self.branch = branch
        self.space = space
        self.method = method
        self.params: NondimParams = branch.states[0].opset.params
        self.last_theta: Optional[float] = None

    def __call__(self, lam: float) -> float:
        states = [s for s in self.branch.states if s.lam == lam]
        if states:
            state = states[0]
        else:
            init = self.branch.nearest(lam)
            state = solve_steady(self.space, self.params.with_lambda(lam), init=init, opset=init.opset)
        result = lambda1(state, self.space, self.method)
        self.last_theta = result.theta
        return result.value
