"""
Tests for steady solves, continuation and truncation-radius extrapolation
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from src.discretization import assemble, build_fsi_space
from src.exceptions import ContinuationStalled, IllConditionedFit, NewtonDiverged
from src.geometry import BodyShape, build_annulus_mesh, refine
from src.models import NondimParams
from src.steady import (
    continuation_sweep,
    energy_distance,
    extrapolate_in_radius,
    mirror_defect,
    richardson_fit,
    solve_steady,
    spring_elongation,
    uniqueness_restarts,
)
from src.verification import StreamFunctionFlow, l2_error, observed_orders, steady_forcing

@pytest.fixture(scope="module")
def stokes_state(pinned_space, pinned_ops, params):
    return solve_steady(pinned_space, params, opset=pinned_ops)

@pytest.fixture(scope="module")
def branch(pinned_space, pinned_ops, params):
    return continuation_sweep(pinned_space, params, [0.0, 0.5, 1.0], opset=pinned_ops)

class TestSolveSteady:
    """Test cases for solve_steady"""

    def test_stokes_converges_in_one_step(self, stokes_state):
        assert stokes_state.iterations == 1
        assert stokes_state.residual <= 1e-10

    def test_drag_positive_lift_zero(self, stokes_state):
        """Stream along e_1 pushes the body along e_1; the mirror-symmetric mesh gives no lift"""
        assert stokes_state.drag > 0
        assert abs(stokes_state.lift) < 1e-8 * stokes_state.drag

    def test_spring_balances_traction(self, stokes_state, params):
        chi = spring_elongation(stokes_state, params)
        assert chi == pytest.approx(-(params.varpi / params.omega_n2) * stokes_state.force)
        assert stokes_state.chi0 == pytest.approx(chi)

    def test_body_velocity_is_lifting(self, stokes_state):
        space = stokes_state.space
        u = space.components(stokes_state.u_full)
        assert np.all(u[space.body_nodes, 0] == 1.0)
        assert np.all(u[space.outer_nodes] == 0.0)

    def test_divergence_free(self, stokes_state, pinned_ops):
        lift = stokes_state.space.lifting
        div = pinned_ops.div_full @ stokes_state.u_full
        assert np.linalg.norm(div) < 1e-9
        assert np.linalg.norm(pinned_ops.div_full @ lift) > 0

    def test_unpinned_space_rejected(self, coupled_space, params):
        with pytest.raises(ValueError):
            solve_steady(coupled_space, params)

    def test_negative_lambda_rejected(self, pinned_space):
        with pytest.raises(ValueError):
            solve_steady(pinned_space, NondimParams.model_construct(lam=-1.0, omega_n2=1.0, varpi=1.0))

    def test_newton_diverged_carries_iterate(self, pinned_space, pinned_ops, params):
        with pytest.raises(NewtonDiverged) as info:
            solve_steady(pinned_space, params.with_lambda(5.0), opset=pinned_ops, max_iter=1, tol=1e-14)
        x, pi = info.value.last_iterate
        assert x.shape == (pinned_space.n_dofs,)
        assert info.value.residual > 1e-14

class TestContinuation:
    """Test cases for continuation_sweep"""

    def test_branch_order(self, branch):
        assert branch.lambdas == [0.0, 0.5, 1.0]
        assert all(s.residual <= 1e-10 for s in branch.states)
        assert branch.bisected == [False, False, False]

    def test_warm_start_is_cheap(self, branch):
        assert max(branch.iterations) <= 6

    def test_symmetry_preserved(self, branch):
        assert mirror_defect(branch.states[-1]) < 1e-8

    def test_nearest(self, branch):
        assert branch.nearest(0.4).lam == 0.5

    def test_non_increasing_grid(self, pinned_space, params):
        with pytest.raises(ValueError):
            continuation_sweep(pinned_space, params, [0.0, 0.5, 0.5])

    def test_stalled(self, pinned_space, pinned_ops, params):
        failure = NewtonDiverged("forced", residual=1.0)
        with patch("src.steady.solve_steady", side_effect=failure):
            with pytest.raises(ContinuationStalled) as info:
                continuation_sweep(pinned_space, params, [0.2, 0.4], opset=pinned_ops)
        assert info.value.last_lambda == 0.2
        assert info.value.trace[0] == (0.2, "diverged")
        assert len(info.value.partial) == 0

    def test_stalled_keeps_converged_states(self, pinned_space, pinned_ops, params):
        def diverge_beyond(space, p, **kwargs):
            if p.lam > 0.5:
                raise NewtonDiverged("forced", residual=1.0)
            return solve_steady(space, p, **kwargs)

        with patch("src.steady.solve_steady", side_effect=diverge_beyond):
            with pytest.raises(ContinuationStalled) as info:
                continuation_sweep(pinned_space, params, [0.0, 0.5, 1.0], opset=pinned_ops, max_bisections=2)
        assert info.value.last_lambda == 0.5
        assert info.value.partial.lambdas == [0.0, 0.5]

    def test_uniqueness_at_small_lambda(self, pinned_space, pinned_ops, params):
        distances = uniqueness_restarts(pinned_space, params.with_lambda(0.5), seeds=(1, 2), opset=pinned_ops)
        assert max(distances) < 1e-8

    def test_energy_distance(self, branch, pinned_ops):
        a, b = branch.states[0], branch.states[1]
        assert energy_distance(pinned_ops, a, a) == 0.0
        assert energy_distance(pinned_ops, a, b) > 0.0

class TestRichardson:
    """Test cases for extrapolation in the truncation radius"""

    def test_known_decay(self):
        radii = [4.0, 8.0, 16.0]
        result = richardson_fit(radii, [3 * math.pi + 2.0 / R for R in radii])
        assert result.value == pytest.approx(3 * math.pi, rel=1e-12)
        assert result.order == pytest.approx(1.0, rel=1e-10)

    def test_two_radii_assume_first_order(self):
        result = richardson_fit([4.0, 8.0], [1.5, 1.25])
        assert result.order == 1.0
        assert result.value == pytest.approx(1.0)

    def test_non_monotone(self):
        with pytest.raises(IllConditionedFit):
            richardson_fit([4.0, 8.0, 16.0], [1.0, 2.0, 1.5])

    def test_repeated_radius(self):
        with pytest.raises(IllConditionedFit):
            richardson_fit([4.0, 4.0], [1.0, 2.0])

    def test_unknown_quantity(self, stokes_state):
        with pytest.raises(ValueError):
            extrapolate_in_radius([stokes_state], "torque")

class TestManufacturedSolution:
    """Test cases for the spatial convergence order"""

    @pytest.mark.slow
    def test_velocity_order(self):
        """L2 velocity error decays at least like h^(p_v + 0.7)"""
        flow = StreamFunctionFlow(r_inner=0.75, r_outer=1.75)
        mesh = build_annulus_mesh(BodyShape.disk(), R=2.0, h=0.25)
        params = NondimParams(lam=1.0)
        errors = []
        for _ in range(3):
            space = build_fsi_space(mesh, 2, pin_rigid=True)
            state = solve_steady(space, params, forcing=steady_forcing(flow, params.lam))
            errors.append(l2_error(space, state.u_full, flow.velocity))
            mesh = refine(mesh)
        orders = observed_orders(errors)
        assert orders[-1] >= 2.7

    def test_exact_field_is_consistent(self):
        """The smooth field equals e_1 near the body and vanishes near the outer circle"""
        flow = StreamFunctionFlow(r_inner=0.75, r_outer=1.75)
        pts = np.array([[0.6, 0.0], [0.0, 0.7], [1.8, 0.1]])
        u = flow.velocity(pts)
        assert u[0] == pytest.approx([1.0, 0.0])
        assert u[1] == pytest.approx([1.0, 0.0])
        assert u[2] == pytest.approx([0.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        flow = StreamFunctionFlow(r_inner=0.75, r_outer=1.75)
        p = np.array([1.1, 0.4])
        eps = 1e-6
        fd = np.column_stack([(flow.velocity(p + eps * e) - flow.velocity(p - eps * e)) / (2 * eps)
                              for e in np.eye(2)])
        assert flow.gradient(p) == pytest.approx(fd, abs=1e-7)

class TestStokesDrag:
    """Test cases for the Stokes drag of a sphere"""

    @pytest.mark.slow
    def test_sphere_drag(self):
        """Drag approaches 3 pi: coarse mesh at R = 8 within 15%, extrapolated within 5%"""
        params = NondimParams(lam=1e-3)
        states = []
        for R in (4.0, 8.0, 16.0):
            mesh = build_annulus_mesh(BodyShape.sphere(), R=R, h=0.35)
            space = build_fsi_space(mesh, 2, pin_rigid=True)
            states.append(solve_steady(space, params, opset=assemble(space, params)))
        assert states[1].drag == pytest.approx(3 * math.pi, rel=0.15)
        assert extrapolate_in_radius(states).value == pytest.approx(3 * math.pi, rel=0.05)

if __name__ == "__main__":
    pytest.main([__file__])
