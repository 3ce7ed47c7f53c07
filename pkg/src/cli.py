"""
Command-line driver: mesh, steady, thresholds, modes, transient, bifurcate

Exit codes: 0 success, 2 invalid configuration or input, 3 solver failure,
4 NaN output or threshold ordering violation.
"""

import argparse
import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .bifurcation import (
    BranchBaseFlow,
    FrozenBaseFlow,
    PathEvaluator,
    certify,
    trace_path,
)
from .config import load_run_config, settings
from .discretization import FsiSpace, OperatorSet, assemble, build_fsi_space, nondimensionalize
from .exceptions import (
    ConfigurationError,
    ContinuationStalled,
    EmptyDomain,
    FsiLabError,
    NonFiniteOutput,
    OrderingViolation,
    UnsupportedDegree,
)
from .geometry import Mesh, mesh_from_config, mesh_quality
from .modal import stokes_fsi_modes, verify_modes
from .models import NondimParams, RunConfig
from .persistence import RunRecorder, load_branch, save_branch, save_modes, write_csv, write_json
from .plots import branch_plot, eigenpath_plot, energy_plot, threshold_plot
from .steady import Branch, SteadyState, continuation_sweep, solve_steady
from .thresholds import find_lambda_tilde, lambda2, threshold_table
from .transient import (
    Trajectory,
    assemble_ode_tensors,
    compare_trajectories,
    energy_monitor,
    gronwall_bound,
    integrate_galerkin,
    integrate_monolithic,
    normalized_initial_data,
    project_initial_data,
)
from .vtk_io import write_vtk

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_OUTPUT = 4

ORDERING_TOL = 1e-10
FROZEN_SLOPE_TOL = 1e-4

class RunContext:
    """Validated config plus the command-line overrides of one run"""

    def __init__(self, command: str, config: RunConfig, out_dir: Path, jobs: int, seed: int):
        self.command = command
        self.config = config
        self.out_dir = out_dir
        self.jobs = jobs
        self.seed = seed
        self.recorder = RunRecorder(command, config, out_dir, seed)
        self._mesh: Optional[Mesh] = None

    @property
    def params(self) -> NondimParams:
        if self.config.physical is not None:
            return nondimensionalize(self.config.physical)
        p = self.config.params
        return NondimParams() if p is None else NondimParams(omega_n2=p.omega_n2, varpi=p.varpi)

    @property
    def mesh(self) -> Mesh:
        if self._mesh is None:
            m = self.config.mesh
            self._mesh = mesh_from_config(self.config.body, m.R, m.h, m.dimension, m.refinements)
        return self._mesh

    def space(self, pinned: bool) -> FsiSpace:
        return build_fsi_space(self.mesh, self.config.mesh.velocity_degree, pin_rigid=pinned)

    def sweep_kwargs(self) -> Dict[str, Optional[float]]:
        s = self.config.solver
        return {"tol": s.newton_tol, "max_iter": s.newton_max_iter, "max_bisections": s.max_bisections}

@contextmanager
def solver_overrides(config: RunConfig) -> Iterator[None]:
    """Apply the [solver] eigen settings for the duration of a run"""
    saved = (settings.EIG_TOL, settings.DENSE_EIG_LIMIT)
    if config.solver.eig_tol is not None:
        settings.EIG_TOL = config.solver.eig_tol
    if config.solver.dense_limit is not None:
        settings.DENSE_EIG_LIMIT = config.solver.dense_limit
    try:
        yield
    finally:
        settings.EIG_TOL, settings.DENSE_EIG_LIMIT = saved

# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_mesh(ctx: RunContext) -> int:
    rec = ctx.recorder
    with rec.stage("mesh"):
        mesh = ctx.mesh
        quality = mesh_quality(mesh)
    rec.add(write_vtk(mesh, ctx.out_dir / "mesh.vtk"),
            write_json(ctx.out_dir / "mesh_quality.json", quality.model_dump(mode="json")))
    rec.details["quality"] = quality.model_dump(mode="json")
    rec.monitor("positive_cells", quality.min_cell_measure > 0)
    return EXIT_OK

def _steady_rows(branch: Branch, dim: int) -> List[list]:
    rows = []
    for s in branch.states:
        chi = [float(c) for c in s.chi0]
        rows.append([s.lam, s.drag, s.lift, *chi[:dim], s.iterations, s.residual])
    return rows

def _steady_header(dim: int) -> List[str]:
    chi = ["chi0_x", "chi0_y", "chi0_z"][:dim]
    return ["lambda", "drag", "lift", *chi, "newton_iters", "residual"]

def _write_branch(ctx: RunContext, branch: Branch, dim: int) -> None:
    ctx.recorder.add(save_branch(branch, ctx.out_dir / "branch"),
                     write_csv(ctx.out_dir / "steady.csv", _steady_header(dim), _steady_rows(branch, dim)))

def cmd_steady(ctx: RunContext) -> int:
    rec = ctx.recorder
    space = ctx.space(pinned=True)
    opset = assemble(space, ctx.params)
    dim = space.dim
    with rec.stage("continuation"):
        try:
            branch = continuation_sweep(space, ctx.params, ctx.config.sweep.lambdas, opset=opset,
                                        **ctx.sweep_kwargs())
        except ContinuationStalled as e:
            rec.details["stalled_at"] = e.last_lambda
            rec.details["trace"] = [list(t) for t in e.trace]
            rec.monitor("converged", False)
            if e.partial is not None and len(e.partial):
                logger.warning(f"Keeping {len(e.partial)} states converged before the stall")
                _write_branch(ctx, e.partial, dim)
            raise
    _write_branch(ctx, branch, dim)
    if ctx.config.output.plots:
        rec.add(branch_plot(branch.lambdas, [s.drag for s in branch.states],
                            [float(s.chi0[0]) for s in branch.states], ctx.out_dir / "branch.svg"))
    rec.details["bisected"] = branch.bisected
    rec.monitor("converged", True)
    return EXIT_OK

def _zero_branch(opset: OperatorSet, lambdas: Sequence[float], R: float, h: float) -> Branch:
    space = opset.space
    d = space.dim
    states = [SteadyState(lam=lam, x=np.zeros(space.n_dofs), u_full=np.zeros(d * space.n_nodes),
                          pi=np.zeros(space.n_pressure), chi0=np.zeros(d), force=np.zeros(d),
                          residual=0.0, iterations=0, R=R, h=h, opset=opset)
              for lam in lambdas]
    return Branch(states=states, bisected=[False] * len(states))

def _threshold_branch(ctx: RunContext, opset: OperatorSet) -> Branch:
    section = ctx.config.thresholds
    if section.base_flow == "zero":
        return _zero_branch(opset, ctx.config.sweep.lambdas, ctx.config.mesh.R, ctx.config.mesh.h)
    if section.branch_dir is not None:
        return load_branch(section.branch_dir, opset)
    return continuation_sweep(opset.space, ctx.params, ctx.config.sweep.lambdas, opset=opset,
                              **ctx.sweep_kwargs())

def check_ordering(lambda1_value: float, lambda2_value: float, lam: float):
    """Raise OrderingViolation unless lambda2 <= lambda1 up to a relative 1e-10"""
    if math.isinf(lambda1_value):
        return
    if lambda2_value - lambda1_value > ORDERING_TOL * max(1.0, abs(lambda1_value)):
        raise OrderingViolation(f"lambda2={lambda2_value!r} exceeds lambda1={lambda1_value!r} at lambda={lam}")

def cmd_thresholds(ctx: RunContext) -> int:
    rec = ctx.recorder
    method = ctx.config.thresholds.method
    pinned = ctx.space(pinned=True)
    opset = assemble(pinned, ctx.params)
    with rec.stage("branch"):
        branch = _threshold_branch(ctx, opset)
    with rec.stage("thresholds"):
        rows = threshold_table(branch, pinned, ctx.space(pinned=False), method=method, jobs=ctx.jobs)
    for r in rows:
        check_ordering(r.lambda1, r.lambda2, r.lam)
    rec.monitor("ordering", True)
    rec.add(write_csv(ctx.out_dir / "thresholds.csv", ["lambda", "lambda1", "lambda2", "gamma", "theta_residual"],
                      [[r.lam, r.lambda1, r.lambda2, r.gamma, r.theta_residual] for r in rows]))
    if ctx.config.thresholds.base_flow == "steady" and len(branch) >= 2:
        with rec.stage("lambda_tilde"):
            tilde = find_lambda_tilde(branch, pinned, method=method)
        rec.details["lambda_tilde"] = None if tilde is None else {
            "value": tilde.value, "bracket": list(tilde.bracket), "residual": tilde.residual,
        }
    if ctx.config.output.plots:
        rec.add(threshold_plot([r.lam for r in rows], [r.lambda1 for r in rows], [r.lambda2 for r in rows],
                               ctx.out_dir / "thresholds.svg"))
    return EXIT_OK

def cmd_modes(ctx: RunContext) -> int:
    rec = ctx.recorder
    opset = assemble(ctx.space(pinned=False), ctx.params)
    with rec.stage("modes"):
        basis = stokes_fsi_modes(opset, ctx.config.modes.count, method=ctx.config.modes.method, seed=ctx.seed)
        report = verify_modes(basis, opset)
    rows = [[i, float(basis.eigenvalues[i]), report.pde_residuals[i], report.rigid_coupling_residuals[i]]
            for i in range(basis.count)]
    rec.add(save_modes(basis, ctx.out_dir / "modes", report.model_dump(mode="json")),
            write_csv(ctx.out_dir / "modes.csv", ["index", "mu", "pde_residual", "rigid_coupling_residual"], rows))
    rec.details["clustered"] = basis.clustered
    rec.details["failures"] = report.failures
    rec.monitor("modes", report.passed)
    return EXIT_OK

def _energy_rows(traj: Trajectory, violations: Sequence[int]) -> List[list]:
    bad = set(violations)
    E = traj.energy
    return [[traj.times[i], E[i], math.sqrt(traj.grad2[i]), math.sqrt(traj.chi2[i]), math.sqrt(traj.sigma2[i]),
             int(i in bad)] for i in range(len(traj.times))]

ENERGY_HEADER = ["t", "E", "grad_norm", "chi", "sigma", "ineq_violation"]

def cmd_transient(ctx: RunContext) -> int:
    rec = ctx.recorder
    section = ctx.config.transient
    params = ctx.params.with_lambda(section.lam)
    unpinned = ctx.space(pinned=False)
    opset = assemble(unpinned, params)

    state = None
    lambda2_value = math.inf
    if section.lam > 0:
        with rec.stage("steady"):
            pinned = ctx.space(pinned=True)
            state = solve_steady(pinned, params, opset=assemble(pinned, params),
                                 tol=ctx.config.solver.newton_tol, max_iter=ctx.config.solver.newton_max_iter)
        with rec.stage("lambda2"):
            lambda2_value = lambda2(state, unpinned, opset=opset,
                                    tol=ctx.config.solver.newton_tol, seed=ctx.seed).value

    bound = gronwall_bound(section.gronwall_a, section.gronwall_b, section.gronwall_alpha)
    epsilon = section.epsilon if section.epsilon is not None else section.epsilon_fraction * bound.delta_max
    u0, chi0, chi1 = normalized_initial_data(opset, section.initial_data, seed=ctx.seed)
    u0, chi0, chi1 = epsilon * u0, epsilon * chi0, epsilon * chi1
    rec.details["epsilon"] = epsilon
    rec.details["gronwall"] = bound.model_dump()
    rec.details["lambda2"] = lambda2_value if math.isfinite(lambda2_value) else "inf"

    trajectories: Dict[str, Trajectory] = {}
    if section.integrator in ("monolithic", "both"):
        with rec.stage("monolithic"):
            trajectories["monolithic"] = integrate_monolithic(
                opset, state, params, u0, chi0, chi1, section.t_end, section.dt,
                snapshot_every=section.snapshot_every)
    if section.integrator in ("galerkin", "both"):
        with rec.stage("galerkin"):
            n_modes = min(section.modes, unpinned.n_dofs - unpinned.n_pressure + 1)
            basis = stokes_fsi_modes(opset, n_modes, seed=ctx.seed)
            system = assemble_ode_tensors(basis, state, params)
            trajectories["galerkin"] = integrate_galerkin(
                system, project_initial_data(u0, chi0, chi1, basis), section.t_end, section.dt)

    reports = {}
    for name, traj in trajectories.items():
        report = energy_monitor(traj, lambda2_value, params, tol=section.energy_tol)
        reports[name] = report.model_dump(mode="json")
        rec.monitor(f"energy_{name}", report.passed)
        rec.add(write_csv(ctx.out_dir / f"energy_{name}.csv", ENERGY_HEADER, _energy_rows(traj, report.violations)))
        if ctx.config.output.plots:
            rec.add(energy_plot(traj.times, traj.energy, ctx.out_dir / f"energy_{name}.svg", grad2=traj.grad2))
        for k, (t, u) in enumerate(traj.snapshots):
            rec.add(write_vtk(ctx.mesh, ctx.out_dir / "snapshots" / f"{name}_{k:04d}.vtk",
                              point_data={"velocity": unpinned.vertex_values(u)}))
    if len(trajectories) == 2:
        rec.details["energy_difference"] = compare_trajectories(trajectories["galerkin"], trajectories["monolithic"])
    rec.details["energy"] = reports
    rec.add(write_json(ctx.out_dir / "energy_report.json", reports))
    return EXIT_OK

def _frozen_check(reports) -> Optional[dict]:
    for r in reports:
        if r.transversality is not None and r.lambda_s:
            expected = -1.0 / r.lambda_s
            error = abs(r.transversality.crossing_slope - expected) / abs(expected)
            return {"lambda_s": r.lambda_s, "crossing_slope": r.transversality.crossing_slope,
                    "expected": expected, "relative_error": error, "passed": error < FROZEN_SLOPE_TOL}
    return None

def cmd_bifurcate(ctx: RunContext) -> int:
    rec = ctx.recorder
    section = ctx.config.bifurcation
    params = ctx.params
    pinned = ctx.space(pinned=True)
    opset = assemble(pinned, params)
    lambdas = np.linspace(section.lambda_min, section.lambda_max, section.samples)

    with rec.stage("base_flow"):
        if section.frozen:
            lam0 = section.frozen_lambda if section.frozen_lambda is not None else section.lambda_min
            base = solve_steady(pinned, params.with_lambda(lam0), opset=opset)
            base_flow = FrozenBaseFlow(base.u_full)
        else:
            branch = continuation_sweep(pinned, params, list(lambdas), opset=opset, **ctx.sweep_kwargs())
            base_flow = BranchBaseFlow(branch, pinned, params)
    evaluator = PathEvaluator(opset, base_flow, method=section.method, seed=ctx.seed)
    with rec.stage("path"):
        path = trace_path(evaluator, lambdas, jobs=ctx.jobs)
    with rec.stage("certify"):
        reports = certify(evaluator, path, cross_tol=section.cross_tol, cluster_tol=section.cluster_tol,
                          range_tol=section.range_tol, fd_step=section.fd_step)

    rows = [[s.lam, s.mu.real, s.mu.imag, "" if s.overlap is None else s.overlap, ";".join(s.flags)]
            for s in path.samples]
    rec.add(write_csv(ctx.out_dir / "eigenpath.csv", ["lambda", "mu_re", "mu_im", "overlap", "flags"], rows))
    payload = {"reports": [r.model_dump(mode="json") for r in reports], "frozen": section.frozen}
    if section.frozen:
        payload["frozen_check"] = _frozen_check(reports)
        if payload["frozen_check"] is not None:
            rec.monitor("frozen_slope", payload["frozen_check"]["passed"])
    rec.add(write_json(ctx.out_dir / "bifurcation_report.json", payload))
    if ctx.config.output.plots:
        crossings = [r.lambda_s for r in reports if r.lambda_s is not None]
        rec.add(eigenpath_plot(path.lambdas, [s.mu.real for s in path.samples],
                               ctx.out_dir / "eigenpath.svg", crossings))
    rec.details["verdicts"] = [r.verdict.value for r in reports]
    return EXIT_OK

COMMANDS: Dict[str, Callable[[RunContext], int]] = {
    "mesh": cmd_mesh,
    "steady": cmd_steady,
    "thresholds": cmd_thresholds,
    "modes": cmd_modes,
    "transient": cmd_transient,
    "bifurcate": cmd_bifurcate,
}

# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", default=None, help="Output directory (default: [output] directory)")
    common.add_argument("--jobs", type=int, default=1, help="Worker processes for lambda samples")
    common.add_argument("--seed", type=int, default=None, help="Random seed (default: config seed)")

    parser = argparse.ArgumentParser(description="Spring-mounted body in a viscous stream: numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} workflow")
    return parser

def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
    except ValidationError as e:
        logger.error(f"Invalid configuration {args.config}: {e}")
        return EXIT_INVALID
    except ConfigurationError as e:
        logger.error(str(e))
        return EXIT_INVALID
    if args.jobs < 1:
        logger.error(f"--jobs must be positive, got {args.jobs}")
        return EXIT_INVALID

    out_dir = Path(args.out or config.output.directory)
    seed = args.seed if args.seed is not None else config.seed
    ctx = RunContext(args.command, config, out_dir, args.jobs, seed)
    logger.info(f"Running {args.command} with config {args.config} into {out_dir}")

    code = EXIT_OK
    try:
        with solver_overrides(config):
            code = COMMANDS[args.command](ctx)
    except (NonFiniteOutput, OrderingViolation) as e:
        logger.error(f"{type(e).__name__}: {e}")
        code = EXIT_OUTPUT
    except (ConfigurationError, EmptyDomain, UnsupportedDegree, ValidationError, ValueError) as e:
        logger.error(f"Invalid input: {e}")
        code = EXIT_INVALID
    except FsiLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        code = EXIT_SOLVER
    finally:
        ctx.recorder.details["exit_code"] = code
        ctx.recorder.write()
    logger.info(f"{args.command} finished with exit code {code}")
    return code
