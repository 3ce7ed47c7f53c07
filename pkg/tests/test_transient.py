"""
Tests for the monolithic and Galerkin perturbation integrators
"""

import math
from unittest.mock import MagicMock

import numpy as np
import pytest

from src.discretization import assemble, build_fsi_space, constrained_dimension
from src.exceptions import BasisMismatch, StepperDiverged, TensorTooLarge
from src.geometry import BodyShape, build_annulus_mesh
from src.modal import stokes_fsi_modes
from src.models import NondimParams
from src.steady import solve_steady
from src.thresholds import lambda2
from src.transient import (
    MAX_GALERKIN_MODES,
    GalerkinState,
    Trajectory,
    assemble_ode_tensors,
    compare_trajectories,
    energy_monitor,
    gronwall_bound,
    integrate_galerkin,
    integrate_monolithic,
    no_oscillation_check,
    normalized_initial_data,
    project_initial_data,
    reduced_vector,
)
from src.verification import bump_forcing, l2_norm, observed_orders

def _trajectory(energies, dt=0.1):
    traj = Trajectory(varpi=1.0, omega_n2=1.0)
    for n, e in enumerate(energies):
        traj.record(n * dt, e, e, np.zeros(2), np.zeros(2), dt)
    return traj

@pytest.fixture(scope="module")
def pinned_basis(pinned_ops):
    return stokes_fsi_modes(pinned_ops, 4)

@pytest.fixture(scope="module")
def coupled_basis(coupled_ops):
    return stokes_fsi_modes(coupled_ops, 20)

@pytest.fixture(scope="module")
def tiny_ops():
    """Coupled operators small enough for a full Galerkin basis"""
    mesh = build_annulus_mesh(BodyShape.disk(), R=1.5, h=0.75, symmetric=True)
    space = build_fsi_space(mesh, 2, pin_rigid=False)
    return assemble(space, NondimParams(lam=0.0, omega_n2=2.0, varpi=0.5))

class TestGronwall:
    """Test cases for gronwall_bound"""

    def test_constant_and_root(self):
        bound = gronwall_bound(0.5, 2.0, 2.0)
        M, delta = bound.M, bound.delta_max
        assert M == pytest.approx(12.0)
        assert abs(2 + M * delta + (M * delta) ** 2 - 3 * M) < 1e-10

    def test_small_coefficients_floor(self):
        assert gronwall_bound(0.0, 0.1, 1.5).M == 3.0

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            gronwall_bound(math.inf, 1.0, 2.0)
        with pytest.raises(ValueError):
            gronwall_bound(-1.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            gronwall_bound(1.0, 1.0, 0.5)

class TestInitialData:
    """Test cases for initial data construction"""

    @pytest.mark.parametrize("kind", ["lowest-mode", "random-smooth", "rigid-kick"])
    def test_unit_energy(self, coupled_ops, kind):
        u0, chi0, chi1 = normalized_initial_data(coupled_ops, kind, seed=3)
        p = coupled_ops.params
        energy = u0 @ (coupled_ops.mass_full @ u0) + (chi1 @ chi1 + p.omega_n2 * chi0 @ chi0) / p.varpi
        assert energy == pytest.approx(1.0, rel=1e-12)

    def test_rigid_kick_needs_coupled_space(self, pinned_ops):
        with pytest.raises(ValueError):
            normalized_initial_data(pinned_ops, "rigid-kick")

    def test_unknown_kind(self, coupled_ops):
        with pytest.raises(ValueError):
            normalized_initial_data(coupled_ops, "vortex")

    def test_projection_shape_mismatch(self, pinned_basis):
        with pytest.raises(BasisMismatch):
            project_initial_data(np.zeros(3), np.zeros(2), np.zeros(2), pinned_basis)

    def test_mode_projects_to_unit_vector(self, coupled_basis):
        x = coupled_basis.modes[:, 2]
        init = project_initial_data(coupled_basis.space.full(x), np.zeros(2),
                                    coupled_basis.space.rigid_part(x), coupled_basis)
        assert init.c == pytest.approx(np.eye(coupled_basis.count)[2], abs=1e-10)
        assert init.sigma == pytest.approx(coupled_basis.rigid_parts[2], abs=1e-10)

    def test_zero_data_project_to_zero(self, coupled_basis):
        d = coupled_basis.space.dim
        init = project_initial_data(np.zeros(d * coupled_basis.space.n_nodes), np.zeros(d), np.zeros(d),
                                    coupled_basis)
        assert np.all(init.c == 0.0)
        assert np.all(init.sigma == 0.0)

    def test_projected_energy_is_bounded(self, coupled_ops, coupled_basis):
        """sum c_i^2 grows with N, stays below the kinetic energy, and the deformation norm never grows"""
        space, p = coupled_ops.space, coupled_ops.params
        u0, chi0, chi1 = normalized_initial_data(coupled_ops, "random-smooth", seed=6)
        kinetic = u0 @ (coupled_ops.mass_full @ u0) + chi1 @ chi1 / p.varpi
        x0 = reduced_vector(space, u0, chi1)
        deformation = x0 @ (coupled_ops.A @ x0)

        energies = []
        for n in (10, 20):
            basis = coupled_basis.truncate(n)
            c = project_initial_data(u0, chi0, chi1, basis).c
            energies.append(c @ c)
            x = basis.modes @ c
            assert x @ (coupled_ops.A @ x) <= deformation * (1 + 1e-10)
        assert energies[0] <= energies[1] * (1 + 1e-12)
        assert energies[1] <= kinetic + 1e-12

class TestGalerkin:
    """Test cases for the coefficient ODE"""

    def test_rest_state_decay_matches_backward_euler(self, pinned_basis, params):
        """With lam = 0 each coefficient decays by (1 + mu dt)^-n"""
        sys = assemble_ode_tensors(pinned_basis, None, params)
        c0 = np.array([1.0, 0.5, -0.25, 0.125])
        dt, steps = 0.05, 20
        traj = integrate_galerkin(sys, GalerkinState(c=c0, chi=np.zeros(2), sigma=np.zeros(2)), steps * dt, dt)
        expected = c0 * (1.0 + pinned_basis.eigenvalues * dt) ** (-steps)
        assert traj.coefficients[-1] == pytest.approx(expected, rel=1e-9, abs=1e-14)

    def test_quadratic_term_conserves_energy(self, pinned_basis, params):
        """sum_i c_i Q(c, c)_i = 0"""
        sys = assemble_ode_tensors(pinned_basis, None, params.with_lambda(1.0))
        c = np.random.default_rng(0).standard_normal(sys.N)
        assert abs(c @ sys.quadratic(c)) < 1e-10 * np.abs(sys.Q).max() * (c @ c) ** 1.5

    def test_tensor_cap(self, params):
        basis = MagicMock()
        basis.count = MAX_GALERKIN_MODES + 1
        with pytest.raises(TensorTooLarge):
            assemble_ode_tensors(basis, None, params)

    def test_nonpositive_dt(self, pinned_basis, params):
        sys = assemble_ode_tensors(pinned_basis, None, params)
        init = GalerkinState(c=np.ones(4), chi=np.zeros(2), sigma=np.zeros(2))
        with pytest.raises(ValueError):
            integrate_galerkin(sys, init, 1.0, 0.0)

class TestMonolithic:
    """Test cases for integrate_monolithic"""

    def test_energy_inequality_at_rest(self, coupled_ops, params):
        u0, chi0, chi1 = normalized_initial_data(coupled_ops, "rigid-kick")
        traj = integrate_monolithic(coupled_ops, None, params, u0, chi0, chi1, t_end=1.0, dt=0.05)
        report = energy_monitor(traj, math.inf, params)
        assert report.passed, report.violations
        assert report.gamma == 1.0
        assert report.monotone
        assert traj.energy[-1] < traj.energy[0]

    def test_zero_data_stays_at_rest(self, coupled_ops, params):
        d = coupled_ops.space.dim
        u0 = np.zeros(d * coupled_ops.space.n_nodes)
        traj = integrate_monolithic(coupled_ops, None, params, u0, np.zeros(d), np.zeros(d), t_end=0.2, dt=0.1)
        assert np.all(traj.energy == 0.0)

    def test_snapshots(self, coupled_ops, params):
        u0, chi0, chi1 = normalized_initial_data(coupled_ops, "lowest-mode")
        traj = integrate_monolithic(coupled_ops, None, params, u0, chi0, chi1, t_end=0.4, dt=0.1, snapshot_every=2)
        assert [t for t, _ in traj.snapshots] == pytest.approx([0.0, 0.2, 0.4])

    def test_mass_ratio_mismatch(self, coupled_ops):
        d = coupled_ops.space.dim
        with pytest.raises(ValueError):
            integrate_monolithic(coupled_ops, None, NondimParams(varpi=3.0), np.zeros(d * coupled_ops.space.n_nodes),
                                 np.zeros(d), np.zeros(d), t_end=0.1, dt=0.1)

    def test_full_basis_matches_galerkin(self, tiny_ops):
        """The complete modal basis reproduces the monolithic trajectory"""
        n_c = constrained_dimension(tiny_ops)
        if n_c > MAX_GALERKIN_MODES:
            pytest.skip(f"constrained dimension {n_c} exceeds the tensor cap")
        params = tiny_ops.params
        basis = stokes_fsi_modes(tiny_ops, n_c)
        u0, chi0, chi1 = normalized_initial_data(tiny_ops, "random-smooth", seed=4)
        mono = integrate_monolithic(tiny_ops, None, params, u0, chi0, chi1, t_end=0.5, dt=0.05)
        sys = assemble_ode_tensors(basis, None, params)
        gal = integrate_galerkin(sys, project_initial_data(u0, chi0, chi1, basis), 0.5, 0.05)
        assert compare_trajectories(gal, mono) < 1e-8

    def test_truncation_gap_shrinks_with_refinement(self, pinned_ops, params):
        """Sup-t energy gap to the monolithic run decreases over (N, dt) levels"""
        u0, chi0, chi1 = normalized_initial_data(pinned_ops, "random-smooth", seed=5)
        gaps = []
        for n_modes, dt in ((10, 0.1), (20, 0.05), (40, 0.025)):
            mono = integrate_monolithic(pinned_ops, None, params, u0, chi0, chi1, t_end=1.0, dt=dt)
            basis = stokes_fsi_modes(pinned_ops, n_modes)
            gal = integrate_galerkin(assemble_ode_tensors(basis, None, params),
                                     project_initial_data(u0, chi0, chi1, basis), 1.0, dt)
            gaps.append(compare_trajectories(gal, mono))
        assert gaps[0] > gaps[1] > gaps[2]

    @pytest.mark.slow
    def test_small_perturbation_decays_below_threshold(self, coarse_mesh):
        """lam = 0.05 < lambda2 and epsilon from the Gronwall bound: no energy violation, decay by 1e-3 at t = 50"""
        params = NondimParams(lam=0.05, omega_n2=10.0, varpi=1.0)
        pinned = build_fsi_space(coarse_mesh, 2, pin_rigid=True)
        coupled = assemble(build_fsi_space(coarse_mesh, 2, pin_rigid=False), params)
        state = solve_steady(pinned, params, opset=assemble(pinned, params))
        lambda2_value = lambda2(state, coupled.space, opset=coupled).value
        assert params.lam < lambda2_value

        epsilon = 0.1 * gronwall_bound(0.5, 0.5, 3.0).delta_max
        u0, chi0, chi1 = normalized_initial_data(coupled, "random-smooth", seed=0)
        traj = integrate_monolithic(coupled, state, params, epsilon * u0, epsilon * chi0, epsilon * chi1,
                                    t_end=50.0, dt=0.1)
        report = energy_monitor(traj, lambda2_value, params)
        assert traj.energy[0] == pytest.approx(epsilon ** 2, rel=1e-10)
        assert report.gamma > 0
        assert report.violations == []
        assert traj.decay_metric(-1) < 1e-3 * traj.decay_metric(0)

class TestMonitors:
    """Test cases for trajectory diagnostics"""

    def test_record_rejects_nan(self):
        traj = Trajectory(varpi=1.0, omega_n2=1.0)
        with pytest.raises(StepperDiverged):
            traj.record(0.0, math.nan, 0.0, np.zeros(2), np.zeros(2), 0.1)

    def test_record_rejects_time_reversal(self):
        traj = _trajectory([1.0])
        with pytest.raises(ValueError):
            traj.record(0.0, 0.5, 0.5, np.zeros(2), np.zeros(2), 0.1)

    def test_no_oscillation(self):
        assert no_oscillation_check(_trajectory([1.0, 0.8, 0.6, 0.5, 0.4, 0.35]))
        assert not no_oscillation_check(_trajectory([1.0, 0.8, 0.6, 0.5, 0.4, 0.6]))

    def test_compare_identical(self):
        traj = _trajectory([1.0, 0.5, 0.25])
        assert compare_trajectories(traj, traj) == 0.0

    def test_nonpositive_margin_fails(self, params):
        report = energy_monitor(_trajectory([1.0, 0.9]), 0.5, params.with_lambda(1.0))
        assert report.gamma == pytest.approx(-1.0)
        assert not report.passed

class TestTemporalConvergence:
    """Test cases for the backward Euler order"""

    def test_bump_is_compactly_supported(self):
        forcing = bump_forcing(center=(1.2, 0.0), radius=0.4)
        f, F = forcing(0.5 * math.pi, np.array([[1.2, 0.0], [2.0, 0.0]]))
        assert f[0] == pytest.approx([0.0, 1.0])
        assert np.all(f[1] == 0.0)
        assert np.all(F == 0.0)

    @pytest.mark.slow
    def test_first_order_in_time(self, pinned_ops, params):
        """Final-time velocity error against a fine-step reference halves with dt"""
        forcing = bump_forcing(center=(1.2, 0.0), radius=0.5, amplitude=5.0)
        d = pinned_ops.space.dim
        u0 = np.zeros(d * pinned_ops.space.n_nodes)

        def final_field(dt):
            steps = int(round(1.0 / dt))
            traj = integrate_monolithic(pinned_ops, None, params, u0, np.zeros(d), np.zeros(d), t_end=1.0,
                                        dt=dt, forcing=forcing, snapshot_every=steps)
            return traj.snapshots[-1][1]

        reference = final_field(0.1 / 64)
        errors = [l2_norm(pinned_ops.space, final_field(dt) - reference) for dt in (0.1, 0.05, 0.025)]
        orders = observed_orders(errors)
        assert np.all((orders >= 0.8) & (orders <= 1.2))

if __name__ == "__main__":
    pytest.main([__file__])
