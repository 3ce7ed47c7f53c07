"""
Steady equilibria of the body in the stream: Newton solves, natural
continuation in lambda and extrapolation in the truncation radius
"""

import math
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .config import settings
from .discretization import Forcing, FsiSpace, OperatorSet, assemble
from .exceptions import (
    ContinuationStalled,
    IllConditionedFit,
    LinearSolveFailure,
    NewtonDiverged,
    SaddleSolveFailure,
)
from .models import ExtrapolationResult, NondimParams

logger = logging.getLogger(__name__)

@dataclass(eq=False)
class SteadyState:
    """Converged steady solution (u0, p0, chi0) at one lambda"""
    lam: float
    x: np.ndarray
    u_full: np.ndarray
    pi: np.ndarray
    chi0: np.ndarray
    force: np.ndarray
    residual: float
    iterations: int
    R: float
    h: float
    opset: OperatorSet = field(repr=False)

    @property
    def space(self) -> FsiSpace:
        return self.opset.space

    @property
    def p(self) -> np.ndarray:
        return -self.pi

    @property
    def drag(self) -> float:
        return float(self.force[0])

    @property
    def lift(self) -> float:
        return float(self.force[1])

@dataclass
class Branch:
    """Steady states at strictly increasing lambda"""
    states: List[SteadyState] = field(default_factory=list)
    bisected: List[bool] = field(default_factory=list)

    @property
    def lambdas(self) -> List[float]:
        return [s.lam for s in self.states]

    @property
    def iterations(self) -> List[int]:
        return [s.iterations for s in self.states]

    def __len__(self) -> int:
        return len(self.states)

    def nearest(self, lam: float) -> SteadyState:
        return min(self.states, key=lambda s: abs(s.lam - lam))

def spring_elongation(state: SteadyState, params: NondimParams) -> np.ndarray:
    """chi0 = -(varpi / omega_n^2) * integral of T(u0, p0) n over the body"""
    return -(params.varpi / params.omega_n2) * np.asarray(state.force)

class _SteadyProblem:
    """Residual and Jacobian of the steady system on a pinned space with lifting"""

    def __init__(self, opset: OperatorSet, lam: float, forcing: Optional[Forcing]):
        self.opset = opset
        self.space = opset.space
        self.lam = lam
        self.load = opset.load_vector(forcing) if forcing is not None else None
        self.lift = self.space.lifting
        self.div_rhs = -(opset.div_full @ self.lift)

    def velocity(self, x: np.ndarray) -> np.ndarray:
        return self.space.full(x) + self.lift

    def residual(self, x: np.ndarray, pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u = self.velocity(x)
        r = self.space.prolongation.T @ self.opset.momentum_residual(u, pi, self.lam, self.load)
        return r, self.opset.B @ x - self.div_rhs

    def jacobian(self, x: np.ndarray) -> sparse.csr_matrix:
        opset = self.opset
        J = opset.visc_full
        if self.lam:
            u = self.velocity(x)
            J = J - self.lam * (opset.stream_full - opset.advection(u) - opset.advection_of(u))
        return opset.reduce(J)

def _norm(parts) -> float:
    return float(np.sqrt(sum(float(p @ p) for p in parts)))

def solve_steady(space: FsiSpace, params: NondimParams, init: Optional[SteadyState] = None,
                 tol: Optional[float] = None, max_iter: Optional[int] = None,
                 forcing: Optional[Forcing] = None, opset: Optional[OperatorSet] = None,
                 x0: Optional[np.ndarray] = None) -> SteadyState:
    """
    Newton solve of the steady problem at params.lam.

    Args:
        space: pinned space (the body velocity is the lifting e_1)
        params: nondimensional parameters
        init: warm start from a state on the same space
        tol: residual tolerance (settings.NEWTON_TOL)
        max_iter: Newton iteration cap (settings.NEWTON_MAX_ITER)
        forcing: verification forcing hook
        opset: pre-assembled operators on space
        x0: explicit initial reduced velocity

    Raises:
        NewtonDiverged: when the tolerance is not reached; carries the last iterate
        LinearSolveFailure: when a Newton system cannot be factorized
    """
    if params.lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {params.lam}")
    if not space.pinned:
        raise ValueError("steady problem is posed on the pinned space")
    tol = tol or settings.NEWTON_TOL
    max_iter = max_iter or settings.NEWTON_MAX_ITER
    if init is not None and init.x.shape != (space.n_dofs,):
        raise ValueError("initial state lives on an incompatible space")
    if opset is None:
        opset = init.opset if init is not None and init.space is space else assemble(space, params)

    problem = _SteadyProblem(opset, params.lam, forcing)
    if x0 is not None:
        x = np.array(x0, dtype=float)
    elif init is not None:
        x = init.x.copy()
    else:
        x = np.zeros(space.n_dofs)
    pi = init.pi.copy() if init is not None and x0 is None else np.zeros(space.n_pressure)

    r, g = problem.residual(x, pi)
    res = _norm((r, g))
    it = 0
    logger.debug(f"Newton lam={params.lam}: initial residual {res:.3e}")
    while res > tol:
        if it >= max_iter:
            raise NewtonDiverged(f"Newton did not converge at lambda={params.lam} in {max_iter} iterations "
                                 f"(residual {res:.3e})", last_iterate=(x, pi), residual=res)
        try:
            dx, dpi = opset.saddle(problem.jacobian(x)).solve(-r, -g)
        except SaddleSolveFailure as e:
            raise LinearSolveFailure(f"Newton system failed at lambda={params.lam}: {e}") from e

        step = 1.0
        for _ in range(settings.MAX_LINE_SEARCH_HALVINGS + 1):
            x_try, pi_try = x + step * dx, pi + step * dpi
            r_try, g_try = problem.residual(x_try, pi_try)
            res_try = _norm((r_try, g_try))
            if np.isfinite(res_try) and res_try < res:
                break
            step *= 0.5
        else:
            logger.warning(f"Line search exhausted at lambda={params.lam}; taking the smallest step")
        x, pi, r, g, res = x_try, pi_try, r_try, g_try, res_try
        it += 1
        logger.debug(f"Newton lam={params.lam} iter {it}: residual {res:.3e}, step {step}")
        if not np.isfinite(res):
            raise NewtonDiverged(f"Newton produced non-finite residual at lambda={params.lam}",
                                 last_iterate=(x, pi), residual=res)

    u = problem.velocity(x)
    force = opset.traction(u, pi, params.lam, problem.load)
    state = SteadyState(
        lam=params.lam, x=x, u_full=u, pi=pi, chi0=np.zeros(space.dim), force=force,
        residual=res, iterations=it, R=space.mesh.outer_radius, h=space.mesh.mesh_size, opset=opset,
    )
    state.chi0 = spring_elongation(state, params)
    logger.info(f"Steady state lam={params.lam}: {it} Newton iterations, residual {res:.3e}, drag {state.drag:.8g}")
    return state

def continuation_sweep(space: FsiSpace, params: NondimParams, lambdas: Sequence[float],
                       max_bisections: Optional[int] = None, tol: Optional[float] = None,
                       max_iter: Optional[int] = None, opset: Optional[OperatorSet] = None) -> Branch:
    """
    Natural continuation over an increasing lambda grid.

    A failed step is bisected (up to max_bisections levels) between the last
    converged lambda and the target.

    Raises:
        ContinuationStalled: with the last converged lambda, the bisection trace
            and the branch converged so far
    """
    lambdas = list(lambdas)
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    max_bisections = settings.MAX_CONTINUATION_BISECTIONS if max_bisections is None else max_bisections
    opset = opset or assemble(space, params)
    branch = Branch()
    trace: List[Tuple[float, str]] = []
    prev: Optional[SteadyState] = None

    for target in lambdas:
        start = prev.lam if prev is not None else target
        current = prev
        goal, depth, bisected = target, 0, False
        while True:
            try:
                current = solve_steady(space, params.with_lambda(goal), init=current, tol=tol,
                                       max_iter=max_iter, opset=opset)
                trace.append((goal, "converged"))
            except NewtonDiverged:
                trace.append((goal, "diverged"))
                if depth >= max_bisections or current is None or goal == start:
                    raise ContinuationStalled(
                        f"continuation stalled after lambda={start} while aiming at {target}",
                        last_lambda=start, trace=trace, partial=branch,
                    )
                goal = 0.5 * (start + goal)
                depth += 1
                bisected = True
                logger.warning(f"Continuation step failed; bisecting towards lambda={goal}")
                continue
            if goal == target:
                break
            start, goal, depth = goal, target, 0
        branch.states.append(current)
        branch.bisected.append(bisected)
        prev = current
        logger.info(f"Continuation reached lambda={target} ({current.iterations} iterations)")
    return branch

# ---------------------------------------------------------------------------
# Truncation radius
# ---------------------------------------------------------------------------

def richardson_fit(radii: Sequence[float], values: Sequence[float]) -> ExtrapolationResult:
    """
    Fit d(R) = d_inf + c R^-q to the last three (or two, with q = 1) samples.

    Raises:
        IllConditionedFit: for repeated radii, zero differences or non-monotone data
    """
    R = np.asarray(radii, dtype=float)
    d = np.asarray(values, dtype=float)
    order = np.argsort(R)
    R, d = R[order], d[order]
    if len(R) < 2:
        raise IllConditionedFit("need at least two radii")
    if np.any(np.diff(R) <= 0):
        raise IllConditionedFit("radii must be distinct")
    diffs = np.diff(d)
    if np.any(diffs == 0) or not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise IllConditionedFit(f"values are not strictly monotone in R: {d.tolist()}")

    if len(R) == 2:
        q = 1.0
        R1, R2 = R
        d1, d2 = d
    else:
        R1, R2, R3 = R[-3:]
        d1, d2, d3 = d[-3:]
        ratio = (d1 - d2) / (d2 - d3)
        if ratio <= 1.0:
            raise IllConditionedFit(f"differences do not decay (ratio {ratio:.6g})")
        if math.isclose(R2 / R1, R3 / R2, rel_tol=1e-12):
            q = math.log(ratio) / math.log(R2 / R1)
        else:
            def mismatch(qq):
                return (R1 ** -qq - R2 ** -qq) / (R2 ** -qq - R3 ** -qq) - ratio
            try:
                q = brentq(mismatch, 1e-6, 50.0, xtol=1e-14)
            except ValueError as e:
                raise IllConditionedFit(f"no decay order fits the data: {e}") from e
        R1, R2, d1, d2 = R2, R3, d2, d3

    c = (d1 - d2) / (R1 ** -q - R2 ** -q)
    d_inf = d2 - c * R2 ** -q
    return ExtrapolationResult(value=float(d_inf), order=float(q), coefficient=float(c),
                               radii=R.tolist(), values=d.tolist())

def extrapolate_in_radius(states: Sequence[SteadyState], quantity: str = "drag") -> ExtrapolationResult:
    """Extrapolate 'drag', 'lift' or 'chi0' (norm) to R -> infinity"""
    getters = {
        "drag": lambda s: s.drag,
        "lift": lambda s: s.lift,
        "chi0": lambda s: float(np.linalg.norm(s.chi0)),
    }
    if quantity not in getters:
        raise ValueError(f"unknown quantity {quantity!r}")
    result = richardson_fit([s.R for s in states], [getters[quantity](s) for s in states])
    logger.info(f"Extrapolated {quantity}: {result.value:.10g} (order {result.order:.4g})")
    return result

# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def energy_distance(opset: OperatorSet, a: SteadyState, b: SteadyState) -> float:
    diff = a.x - b.x
    return float(np.sqrt(diff @ (opset.A @ diff)))

def uniqueness_restarts(space: FsiSpace, params: NondimParams, seeds: Sequence[int] = (1, 2),
                     scale: float = 1.0, opset: Optional[OperatorSet] = None) -> List[float]:
    """Pairwise energy-norm distances of Newton solutions started from random initial fields"""
    opset = opset or assemble(space, params)
    states = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x0 = scale * rng.standard_normal(space.n_dofs)
        states.append(solve_steady(space, params, opset=opset, x0=x0))
    return [energy_distance(opset, a, b) for a, b in combinations(states, 2)]

def mirror_map(space: FsiSpace) -> np.ndarray:
    """Node permutation of the reflection x2 -> -x2 (and x3 -> -x3)"""
    flip = np.ones(space.dim)
    flip[1:] = -1.0
    tree = cKDTree(space.nodes)
    dist, idx = tree.query(space.nodes * flip)
    if dist.max() > 1e-10 * space.mesh.mesh_size:
        raise ValueError("mesh is not mirror symmetric")
    return idx

def mirror_defect(state: SteadyState) -> float:
    """Relative max-norm of u0 minus its mirror image"""
    space = state.space
    perm = mirror_map(space)
    u = space.components(state.u_full)
    flip = np.ones(space.dim)
    flip[1:] = -1.0
    mirrored = u[perm] * flip
    return float(np.abs(u - mirrored).max() / max(np.abs(u).max(), 1e-300))
