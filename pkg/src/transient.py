"""
Perturbation dynamics about a steady state

Two integrators of the same backward Euler discretization:

- integrate_monolithic: full saddle system in (x, pi) per step, the spring
  elongation eliminated through chi = chi_prev + dt * sigma;
- integrate_galerkin: the ODE system for the coefficients of a modified Stokes
  basis, dc/dt = L c + lam Q(c, c) - (omega_n^2 / varpi) H chi, dchi/dt = H^T c.

With the full constrained basis both produce the same trajectory. Energy
E = ||u||^2 + varpi^-1 (|sigma|^2 + omega_n^2 |chi|^2) is recorded per step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import bisect

from .config import settings
from .discretization import FsiSpace, OperatorSet
from .eigen import Constraint
from .exceptions import BasisMismatch, LinearSolveFailure, SaddleSolveFailure, StepperDiverged, TensorTooLarge
from .models import EnergyReport, GronwallBound, NondimParams
from .modal import ModalBasis, stokes_fsi_modes
from .steady import SteadyState
from .thresholds import stability_margin

logger = logging.getLogger(__name__)

MAX_GALERKIN_MODES = 200
INITIAL_DATA_KINDS = ("lowest-mode", "random-smooth", "rigid-kick")

# Time-dependent forcing hook: (t, quadrature points) -> (f, F)
TimeForcing = Callable[[float, np.ndarray], Tuple[np.ndarray, np.ndarray]]

@dataclass
class GalerkinState:
    c: np.ndarray
    chi: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

@dataclass(eq=False)
class OdeSystem:
    """Coefficient ODE of a Galerkin truncation"""
    L: np.ndarray
    Q: np.ndarray = field(repr=False)
    H: np.ndarray
    eigenvalues: np.ndarray
    grad_gram: np.ndarray
    lam: float
    omega_n2: float
    varpi: float

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def quadratic(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("ikm,k,m->i", self.Q, c, c)

    def quadratic_jacobian(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("ikm,m->ik", self.Q, c) + np.einsum("ikm,k->im", self.Q, c)

    def rhs(self, c: np.ndarray, chi: np.ndarray) -> np.ndarray:
        out = self.L @ c + self.lam * self.quadratic(c)
        if self.H.shape[1]:
            out -= (self.omega_n2 / self.varpi) * (self.H @ chi)
        return out

@dataclass
class Trajectory:
    """Time grid and per-step energy diagnostics"""
    varpi: float
    omega_n2: float
    times: List[float] = field(default_factory=list)
    u2: List[float] = field(default_factory=list)
    grad2: List[float] = field(default_factory=list)
    sigma2: List[float] = field(default_factory=list)
    chi2: List[float] = field(default_factory=list)
    dt_eff: List[float] = field(default_factory=list)
    coefficients: List[np.ndarray] = field(default_factory=list, repr=False)
    snapshots: List[Tuple[float, np.ndarray]] = field(default_factory=list, repr=False)

    def record(self, t: float, u2: float, grad2: float, sigma: np.ndarray, chi: np.ndarray, dt: float):
        values = (u2, grad2, float(sigma @ sigma), float(chi @ chi))
        if not all(math.isfinite(v) for v in values):
            raise StepperDiverged(f"non-finite diagnostics at t={t}")
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(t)
        self.u2.append(values[0])
        self.grad2.append(values[1])
        self.sigma2.append(values[2])
        self.chi2.append(values[3])
        self.dt_eff.append(dt)

    @property
    def energy(self) -> np.ndarray:
        return (np.asarray(self.u2)
                + (np.asarray(self.sigma2) + self.omega_n2 * np.asarray(self.chi2)) / self.varpi)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def decay_metric(self, i: int) -> float:
        """||grad u|| + |chi| + |sigma| at record i"""
        return math.sqrt(self.grad2[i]) + math.sqrt(self.chi2[i]) + math.sqrt(self.sigma2[i])

# ---------------------------------------------------------------------------
# Data and operators
# ---------------------------------------------------------------------------

def reduced_vector(space: FsiSpace, u_full: np.ndarray, rigid: Optional[np.ndarray] = None) -> np.ndarray:
    """Interior nodal values of u_full plus the given rigid velocity"""
    x = space.prolongation.T @ u_full
    if not space.pinned:
        x[space.rigid] = 0.0 if rigid is None else rigid
    return x

def linear_operator(opset: OperatorSet, u0_full: Optional[np.ndarray]) -> sparse.csr_matrix:
    """Reduced D1 - P^T N(u0) P - P^T C(u0) Rel; the streaming part alone for a zero base flow"""
    if u0_full is None or not np.any(u0_full):
        return opset.D1s
    return (opset.D1s - opset.linearized_advection(u0_full, relative=True)).tocsr()

def project_initial_data(u0_full: np.ndarray, chi0: np.ndarray, chi1: np.ndarray,
                         basis: ModalBasis) -> GalerkinState:
    """
    Galerkin coefficients of initial data.

    c_i = (u0, psi_i) + varpi^-1 chi1 . psi_hat_i, chi = chi0.

    Raises:
        BasisMismatch: if the data do not live on the basis space
    """
    space = basis.space
    opset = basis.opset
    d = space.dim
    if np.shape(u0_full) != (d * space.n_nodes,) or np.shape(chi0) != (d,) or np.shape(chi1) != (d,):
        raise BasisMismatch("initial data do not match the basis space")
    H = basis.rigid_parts
    c = basis.full_modes().T @ (opset.mass_full @ u0_full)
    if H.shape[1]:
        c = c + (H @ chi1) / opset.params.varpi
    return GalerkinState(c=c, chi=np.array(chi0, dtype=float), sigma=H.T @ c if H.shape[1] else np.zeros(d))

def normalized_initial_data(opset: OperatorSet, kind: str, seed: int = 0,
                            basis: Optional[ModalBasis] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Initial triple (u0, chi0, chi1) with unit energy.

    lowest-mode: the first modified Stokes mode; random-smooth: a constrained
    Stokes solve of a seeded random load; rigid-kick: unit rigid velocity
    along e_1 with the fluid at rest away from the body nodes.
    """
    if kind not in INITIAL_DATA_KINDS:
        raise ValueError(f"unknown initial data kind {kind!r}; expected one of {INITIAL_DATA_KINDS}")
    space = opset.space
    d = space.dim
    params = opset.params
    chi0 = np.zeros(d)
    if kind == "lowest-mode":
        if basis is None:
            basis = stokes_fsi_modes(opset, 1)
        x = basis.modes[:, 0]
    elif kind == "random-smooth":
        rng = np.random.default_rng(seed)
        solve = Constraint.of(opset).solver(opset.A)
        x = solve(opset.M_w @ rng.standard_normal(space.n_dofs))
        if not space.pinned:
            chi0 = 0.5 * rng.standard_normal(d)
    else:
        if space.pinned:
            raise ValueError("rigid-kick data need the coupled (unpinned) space")
        x = np.zeros(space.n_dofs)
        x[space.rigid] = np.eye(d)[0]

    u0 = space.full(x)
    chi1 = space.rigid_part(x).copy() if not space.pinned else np.zeros(d)
    energy = float(u0 @ (opset.mass_full @ u0)) + (chi1 @ chi1 + params.omega_n2 * chi0 @ chi0) / params.varpi
    scale = 1.0 / math.sqrt(energy)
    return scale * u0, scale * chi0, scale * chi1

def assemble_ode_tensors(basis: ModalBasis, state: Optional[SteadyState], params: NondimParams) -> OdeSystem:
    """
    Linear matrix and quadratic tensor of the coefficient ODE.

    L = -diag(mu) + lam Psi^T L_lin Psi and
    Q[i, k, m] = -psi_i^T P^T N(Rel psi_k) P psi_m, so that sum_i c_i Q(c, c)_i = 0.

    Raises:
        TensorTooLarge: for more than 200 modes
        BasisMismatch: if the state lives on another mesh
    """
    N = basis.count
    if N > MAX_GALERKIN_MODES:
        raise TensorTooLarge(f"{N} modes would need a {N}^3 tensor; the cap is {MAX_GALERKIN_MODES}")
    opset = basis.opset
    space = basis.space
    u0 = None
    if state is not None:
        if state.u_full.shape != (space.dim * space.n_nodes,):
            raise BasisMismatch("steady state and basis live on different meshes")
        u0 = state.u_full

    Psi = basis.modes
    Phi = basis.full_modes()
    mu = np.asarray(basis.eigenvalues, dtype=float)
    L = -np.diag(mu)
    if params.lam:
        L = L + params.lam * (Psi.T @ (linear_operator(opset, u0) @ Psi))

    Rel = space.relative
    Q = np.empty((N, N, N))
    for k in range(N):
        Nk = opset.advection(Rel @ Psi[:, k])
        Q[:, k, :] = -(Phi.T @ (Nk @ Phi))
    if not (np.all(np.isfinite(L)) and np.all(np.isfinite(Q))):
        raise StepperDiverged("non-finite Galerkin tensors")

    logger.info(f"Assembled Galerkin system: N={N}, lam={params.lam}")
    return OdeSystem(L=L, Q=Q, H=basis.rigid_parts, eigenvalues=mu, grad_gram=Psi.T @ (opset.G @ Psi),
                     lam=params.lam, omega_n2=params.omega_n2, varpi=params.varpi)

# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------

def _time_grid(t_end: float, dt: float) -> Tuple[int, float]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    steps = max(1, int(round(t_end / dt)))
    if not math.isclose(steps * dt, t_end, rel_tol=1e-9):
        logger.warning(f"dt adjusted from {dt} to {t_end / steps} to land on t_end={t_end}")
    return steps, t_end / steps

def _record_galerkin(traj: Trajectory, sys: OdeSystem, t: float, c: np.ndarray, chi: np.ndarray, dt: float):
    sigma = sys.H.T @ c if sys.H.shape[1] else np.zeros_like(chi)
    u2 = float(c @ c) - float(sigma @ sigma) / sys.varpi
    traj.record(t, u2, float(c @ (sys.grad_gram @ c)), sigma, chi, dt)
    traj.coefficients.append(c.copy())

def _galerkin_step(sys: OdeSystem, c0: np.ndarray, chi0: np.ndarray, dt: float,
                   tol: float, max_iter: int) -> Optional[np.ndarray]:
    kappa = sys.omega_n2 / sys.varpi
    H = sys.H
    has_rigid = H.shape[1] > 0
    HHt = H @ H.T if has_rigid else 0.0
    base = sys.L - kappa * dt * HHt

    def residual(c):
        spring = kappa * (H @ chi0) if has_rigid else 0.0
        return c - c0 - dt * (base @ c + sys.lam * sys.quadratic(c) - spring)

    c = c0.copy()
    r = residual(c)
    scale = 1.0 + np.linalg.norm(c0)
    for _ in range(max_iter + 1):
        if np.linalg.norm(r) <= tol * scale:
            return c
        J = np.eye(sys.N) - dt * (base + sys.lam * sys.quadratic_jacobian(c))
        try:
            c = c - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        r = residual(c)
        if not np.all(np.isfinite(r)):
            return None
    return None

def integrate_galerkin(sys: OdeSystem, init: GalerkinState, t_end: float, dt: float,
                       tol: Optional[float] = None, max_iter: Optional[int] = None) -> Trajectory:
    """
    Backward Euler for the coefficient ODE with Newton per step.

    A failed step is retried as 2, 4, ... substeps (at most MAX_STEP_HALVINGS
    halvings); the smallest substep is recorded as the effective dt.

    Raises:
        StepperDiverged: when a step fails after all halvings
    """
    steps, dt = _time_grid(t_end, dt)
    tol = tol or settings.NEWTON_TOL
    max_iter = max_iter or settings.NEWTON_MAX_ITER
    traj = Trajectory(varpi=sys.varpi, omega_n2=sys.omega_n2)
    c, chi = init.c.astype(float).copy(), init.chi.astype(float).copy()
    t = init.t
    _record_galerkin(traj, sys, t, c, chi, dt)

    for n in range(steps):
        for level in range(settings.MAX_STEP_HALVINGS + 1):
            sub = 2 ** level
            h = dt / sub
            c_try, chi_try = c, chi
            for _ in range(sub):
                c_next = _galerkin_step(sys, c_try, chi_try, h, tol, max_iter)
                if c_next is None:
                    break
                chi_try = chi_try + h * (sys.H.T @ c_next if sys.H.shape[1] else 0.0)
                c_try = c_next
            else:
                c, chi = c_try, chi_try
                break
            logger.warning(f"Galerkin step at t={t:.6g} failed with dt={h:.3e}; halving")
        else:
            raise StepperDiverged(f"Galerkin step at t={t} failed after {settings.MAX_STEP_HALVINGS} halvings")
        t = init.t + (n + 1) * dt
        _record_galerkin(traj, sys, t, c, chi, h)
    logger.info(f"Galerkin integration finished: {steps} steps to t={t:.6g}, E={traj.energy[-1]:.6e}")
    return traj

class _MonolithicStepper:
    """Backward Euler step of the coupled saddle system about a base flow"""

    def __init__(self, opset: OperatorSet, u0_full: Optional[np.ndarray], params: NondimParams,
                 forcing: Optional[TimeForcing]):
        self.opset = opset
        self.space = opset.space
        self.lam = params.lam
        self.kappa = params.omega_n2 / params.varpi
        self.L_lin = linear_operator(opset, u0_full) if params.lam else None
        self.forcing = forcing
        self.rigid = opset.rigid_identity
        self._linear_cache = {}

    def load(self, t: float) -> Optional[np.ndarray]:
        if self.forcing is None:
            return None
        return self.space.prolongation.T @ self.opset.load_vector(lambda pts: self.forcing(t, pts))

    def _spring(self, chi0: np.ndarray) -> np.ndarray:
        out = np.zeros(self.space.n_dofs)
        if not self.space.pinned:
            out[self.space.rigid] = self.kappa * chi0
        return out

    def _linear_part(self, dt: float) -> sparse.csr_matrix:
        if dt not in self._linear_cache:
            op = self.opset
            K = op.M_w / dt + op.A + self.kappa * dt * self.rigid
            if self.lam:
                K = K - self.lam * self.L_lin
            self._linear_cache = {dt: K.tocsr()}
        return self._linear_cache[dt]

    def residual(self, x, pi, x0, chi0, dt, load):
        op = self.opset
        r = self._linear_part(dt) @ x + op.B.T @ pi - op.M_w @ x0 / dt + self._spring(chi0)
        if self.lam:
            P = self.space.prolongation
            r += self.lam * (P.T @ (op.advection(self.space.relative @ x) @ (P @ x)))
        if load is not None:
            r -= load
        return r, op.B @ x

    def jacobian(self, x, dt):
        J = self._linear_part(dt)
        if self.lam:
            op = self.opset
            space = self.space
            J = J + self.lam * (op.reduce(op.advection(space.relative @ x))
                                + op.reduce(op.advection_of(space.full(x)), space.relative))
        return J

    def step(self, x0, chi0, dt, t_new, tol, max_iter):
        """Return (x, pi) or None when Newton fails"""
        load = self.load(t_new)
        x = x0.copy()
        pi = np.zeros(self.space.n_pressure)
        r, g = self.residual(x, pi, x0, chi0, dt, load)
        scale = 1.0 + np.linalg.norm(self.opset.M_w @ x0) / dt
        for it in range(max_iter + 1):
            res = math.sqrt(float(r @ r + g @ g))
            if not math.isfinite(res):
                return None
            if res <= tol * scale:
                return x, pi
            if it == max_iter:
                return None
            try:
                dx, dpi = self.opset.saddle(self.jacobian(x, dt)).solve(-r, -g)
            except SaddleSolveFailure as e:
                raise LinearSolveFailure(f"time step system failed at t={t_new}: {e}") from e
            x, pi = x + dx, pi + dpi
            r, g = self.residual(x, pi, x0, chi0, dt, load)
            logger.debug(f"monolithic t={t_new:.6g} Newton {it + 1}: residual {np.linalg.norm(r):.3e}")
        return None

def integrate_monolithic(opset: OperatorSet, state: Optional[SteadyState], params: NondimParams,
                         u0_full: np.ndarray, chi0: np.ndarray, chi1: np.ndarray,
                         t_end: float, dt: float, forcing: Optional[TimeForcing] = None,
                         snapshot_every: int = 0, tol: Optional[float] = None,
                         max_iter: Optional[int] = None) -> Trajectory:
    """
    Backward Euler on the full coupled system, fully implicit advection.

    Args:
        opset: operators on the coupled space
        state: steady base flow (None for the rest state)
        params: lam, omega_n^2 and varpi of the perturbation problem
        u0_full, chi0, chi1: initial velocity field, elongation and rigid velocity
        forcing: time-dependent verification forcing
        snapshot_every: keep the velocity field every k steps (0 disables)

    Raises:
        StepperDiverged: when a step fails after all halvings
        LinearSolveFailure: when a step system cannot be factorized
    """
    if not math.isclose(params.varpi, opset.params.varpi):
        raise ValueError("params.varpi differs from the mass ratio the operators were assembled with")
    space = opset.space
    steps, dt = _time_grid(t_end, dt)
    tol = tol or settings.NEWTON_TOL
    max_iter = max_iter or settings.NEWTON_MAX_ITER
    u0 = None if state is None else state.u_full
    if u0 is not None and u0.shape != (space.dim * space.n_nodes,):
        raise BasisMismatch("steady state and operators live on different meshes")
    stepper = _MonolithicStepper(opset, u0, params, forcing)

    x = reduced_vector(space, u0_full, chi1)
    chi = np.array(chi0, dtype=float)
    traj = Trajectory(varpi=params.varpi, omega_n2=params.omega_n2)

    def record(t, h):
        u = space.full(x)
        sigma = space.rigid_part(x) if not space.pinned else np.zeros(space.dim)
        traj.record(t, float(u @ (opset.mass_full @ u)), float(x @ (opset.G @ x)), sigma, chi, h)

    record(0.0, dt)
    if snapshot_every:
        traj.snapshots.append((0.0, space.full(x)))
    t = 0.0
    for n in range(steps):
        t_new = (n + 1) * dt
        for level in range(settings.MAX_STEP_HALVINGS + 1):
            sub = 2 ** level
            h = dt / sub
            x_try, chi_try = x, chi
            for j in range(sub):
                out = stepper.step(x_try, chi_try, h, t + (j + 1) * h, tol, max_iter)
                if out is None:
                    break
                x_try = out[0]
                if not space.pinned:
                    chi_try = chi_try + h * space.rigid_part(x_try)
            else:
                x, chi = x_try, chi_try
                break
            logger.warning(f"Monolithic step at t={t:.6g} failed with dt={h:.3e}; halving")
        else:
            raise StepperDiverged(f"monolithic step at t={t} failed after {settings.MAX_STEP_HALVINGS} halvings")
        t = t_new
        record(t, h)
        if snapshot_every and (n + 1) % snapshot_every == 0:
            traj.snapshots.append((t, space.full(x)))
    logger.info(f"Monolithic integration finished: {steps} steps to t={t:.6g}, E={traj.energy[-1]:.6e}")
    return traj

# ---------------------------------------------------------------------------
# Monitors
# ---------------------------------------------------------------------------

def no_oscillation_check(traj: Trajectory, rise: float = 1.01) -> bool:
    """On t in [T/2, T], E never rises above `rise` times its running minimum"""
    t = np.asarray(traj.times)
    E = traj.energy
    if len(t) < 2:
        return True
    tail = E[t >= 0.5 * t[-1]]
    floor = 1e-14 * max(float(E[0]), 1e-300)
    running_min = np.minimum.accumulate(tail)
    return bool(np.all(tail <= rise * running_min + floor))

def energy_monitor(traj: Trajectory, lambda2_value: float, params: NondimParams,
                   tol: Optional[float] = None) -> EnergyReport:
    """
    Per-step check of 1/2 dE/dt + gamma ||grad u||^2 <= tol * E(0) / dt.

    gamma = 1 - lam / lambda2. A non-positive gamma fails the report.
    """
    tol = 1e-8 if tol is None else tol
    E = traj.energy
    grad2 = np.asarray(traj.grad2)
    dts = np.asarray(traj.dt_eff)
    t = np.asarray(traj.times)
    gamma = stability_margin(params.lam, lambda2_value)
    E0 = float(E[0]) if len(E) else 0.0
    allowance = tol * max(E0, 1e-300)

    violations, max_excess, monotone = [], -math.inf, True
    steps = np.diff(t)
    for n in range(1, len(E)):
        h = steps[n - 1]
        excess = 0.5 * (E[n] - E[n - 1]) / h + gamma * grad2[n]
        max_excess = max(max_excess, float(excess))
        if excess * h > allowance:
            violations.append(n)
        if E[n] - E[n - 1] > allowance:
            monotone = False
    dissipation = float(np.sum(steps * grad2[1:])) if len(E) > 1 else 0.0
    initial = traj.decay_metric(0) if len(E) else 0.0
    final = traj.decay_metric(-1) if len(E) else 0.0
    no_osc = no_oscillation_check(traj)
    margin_positive = gamma > 0
    report = EnergyReport(
        lam=params.lam, lambda2=lambda2_value if math.isfinite(lambda2_value) else None,
        gamma=gamma, margin_positive=margin_positive, tolerance=tol, steps=max(len(E) - 1, 0),
        violations=violations, max_excess=max_excess if math.isfinite(max_excess) else 0.0,
        monotone=monotone, dissipation_integral=dissipation,
        initial_metric=initial, final_metric=final,
        final_grad_norm=math.sqrt(traj.grad2[-1]) if len(E) else 0.0,
        final_chi=math.sqrt(traj.chi2[-1]) if len(E) else 0.0,
        final_sigma=math.sqrt(traj.sigma2[-1]) if len(E) else 0.0,
        decay_ratio=final / initial if initial > 0 else 0.0,
        no_oscillation=no_osc,
        passed=margin_positive and not violations and no_osc,
    )
    level = logging.INFO if report.passed else logging.WARNING
    logger.log(level, f"Energy monitor: gamma={gamma:.6g}, {len(violations)} violations, "
                      f"decay ratio {report.decay_ratio:.3e}, no oscillation={no_osc}")
    return report

def gronwall_bound(a_sup: float, b_sup: float, alpha: float) -> GronwallBound:
    """
    M = 3 max(1, 2a, 2b) and the largest delta with 2 + M delta + (M delta)^alpha < 3M.
    """
    if not (math.isfinite(a_sup) and math.isfinite(b_sup) and math.isfinite(alpha)):
        raise ValueError("Gronwall inputs must be finite")
    if a_sup < 0 or b_sup < 0:
        raise ValueError("a_sup and b_sup must be nonnegative")
    if alpha < 1:
        raise ValueError(f"alpha must be at least 1, got {alpha}")
    M = 3.0 * max(1.0, 2.0 * a_sup, 2.0 * b_sup)

    def excess(delta):
        return 2.0 + M * delta + (M * delta) ** alpha - 3.0 * M

    upper = (3.0 * M - 2.0) / M
    delta = bisect(excess, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return GronwallBound(M=M, delta_max=float(delta))

def compare_trajectories(a: Trajectory, b: Trajectory) -> float:
    """sup over the times of a of |E_a - E_b|, b interpolated linearly"""
    Eb = np.interp(np.asarray(a.times), np.asarray(b.times), b.energy)
    return float(np.max(np.abs(a.energy - Eb)))
