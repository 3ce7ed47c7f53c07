"""
Tests for the coupled Taylor-Hood space and its operators
"""

import math

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import spsolve

from src.discretization import (
    build_fsi_space,
    constrained_dimension,
    duffy_rule,
    export_matrix,
    nondimensionalize,
    physical_elongation,
    project_solenoidal,
    sanity_constants,
    solenoidal_basis,
)
from src.exceptions import UnsupportedDegree
from src.modal import stokes_fsi_modes
from src.models import PhysicalParams

def _random_full(space, seed):
    return np.random.default_rng(seed).standard_normal(space.dim * space.n_nodes)

class TestParameters:
    """Test cases for nondimensionalization"""

    def test_groups(self):
        phys = PhysicalParams(V=2.0, L=0.5, nu=0.1, rho=1000.0, M=3.0, ell=4.0)
        p = nondimensionalize(phys)
        assert p.lam == pytest.approx(10.0)
        assert p.omega_n2 == pytest.approx(0.5 ** 4 * 4.0 / (3.0 * 0.01))
        assert p.varpi == pytest.approx(1000.0 * 0.125 / 3.0)

    def test_zero_viscosity_rejected(self):
        with pytest.raises(ValueError):
            PhysicalParams(V=1.0, L=1.0, nu=0.0, rho=1.0, M=1.0, ell=1.0)

    def test_physical_elongation(self):
        phys = PhysicalParams(V=1.0, L=0.2, nu=1.0, rho=1.0, M=1.0, ell=1.0)
        assert physical_elongation(np.array([1.0, -2.0]), phys) == pytest.approx([0.2, -0.4])

class TestQuadrature:
    """Test cases for the collapsed Gauss rule"""

    def test_triangle_degree_five(self):
        pts, w = duffy_rule(2, 4)
        value = np.sum(w * pts[:, 0] ** 3 * pts[:, 1] ** 2)
        assert value == pytest.approx(math.factorial(3) * math.factorial(2) / math.factorial(7), rel=1e-13)

    def test_tetrahedron_degree_five(self):
        pts, w = duffy_rule(3, 4)
        value = np.sum(w * pts[:, 0] ** 2 * pts[:, 1] * pts[:, 2] ** 2)
        expected = math.factorial(2) * math.factorial(1) * math.factorial(2) / math.factorial(8)
        assert value == pytest.approx(expected, rel=1e-13)
        assert w.sum() == pytest.approx(1.0 / 6.0)

class TestSpace:
    """Test cases for build_fsi_space"""

    def test_unsupported_degree(self, coarse_mesh):
        with pytest.raises(UnsupportedDegree):
            build_fsi_space(coarse_mesh, 1)

    def test_layout(self, coupled_space, pinned_space):
        d = coupled_space.dim
        assert coupled_space.n_interior == d * len(coupled_space.interior_nodes)
        assert coupled_space.n_dofs == coupled_space.n_interior + d
        assert pinned_space.n_dofs == pinned_space.n_interior

    def test_rigid_velocity_on_body_nodes(self, coupled_space):
        x = np.zeros(coupled_space.n_dofs)
        x[coupled_space.rigid] = [0.3, -0.7]
        u = coupled_space.components(coupled_space.full(x))
        assert u[coupled_space.body_nodes] == pytest.approx(np.tile([0.3, -0.7], (len(coupled_space.body_nodes), 1)))
        assert np.all(u[coupled_space.outer_nodes] == 0.0)

    def test_lifting(self, pinned_space):
        u = pinned_space.components(pinned_space.lifting)
        assert np.all(u[pinned_space.body_nodes, 0] == 1.0)
        assert np.all(u[pinned_space.interior_nodes] == 0.0)

class TestOperators:
    """Test cases for assembled forms"""

    def test_symmetric_forms(self, coupled_ops):
        for name in ("M_w", "A", "G"):
            S = getattr(coupled_ops, name)
            assert abs(S - S.T).max() < 1e-13

    def test_mass_weights_rigid_block(self, coupled_space, coupled_ops):
        """<x, x>_w = ||u||^2 + |u_hat|^2 / varpi"""
        x = np.random.default_rng(0).standard_normal(coupled_space.n_dofs)
        u = coupled_space.full(x)
        rigid = coupled_space.rigid_part(x)
        expected = u @ (coupled_ops.mass_full @ u) + rigid @ rigid / coupled_ops.params.varpi
        assert x @ (coupled_ops.M_w @ x) == pytest.approx(expected, rel=1e-12)

    def test_deformation_dominates_gradient(self, coupled_space, coupled_ops):
        """2 ||D u||^2 >= ||grad u||^2 for fields rigid on the body"""
        rng = np.random.default_rng(1)
        for _ in range(5):
            x = rng.standard_normal(coupled_space.n_dofs)
            assert x @ (coupled_ops.A @ x) >= x @ (coupled_ops.G @ x) * (1 - 1e-12)

    def test_advection_is_skew(self, coupled_space, coupled_ops):
        N = coupled_ops.advection(_random_full(coupled_space, 2))
        assert abs(N + N.T).max() < 1e-12

    def test_mixed_form_identity(self, coupled_space, coupled_ops):
        """v^T N(a) b = v^T C(b) a"""
        a, b, v = (_random_full(coupled_space, s) for s in (3, 4, 5))
        lhs = v @ (coupled_ops.advection(a) @ b)
        rhs = v @ (coupled_ops.advection_of(b) @ a)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_streaming_is_skew(self, coupled_ops):
        D = coupled_ops.D1s
        assert abs(D + D.T).max() < 1e-14

    def test_constant_pressure_kernel(self, coupled_ops):
        """B^T 1 vanishes on interior unknowns"""
        ones = np.ones(coupled_ops.B.shape[0])
        r = coupled_ops.B.T @ ones
        assert np.abs(r[:coupled_ops.space.n_interior]).max() < 1e-12

class TestConstraint:
    """Test cases for the divergence constraint"""

    def test_dimension_matches_null_space(self, pinned_ops):
        Z = solenoidal_basis(pinned_ops)
        assert Z.shape[1] == constrained_dimension(pinned_ops)

    def test_projection(self, coupled_space, coupled_ops):
        x = np.random.default_rng(6).standard_normal(coupled_space.n_dofs)
        y = project_solenoidal(coupled_ops, x)
        assert np.linalg.norm(coupled_ops.B @ y) < 1e-10 * np.linalg.norm(x)
        assert project_solenoidal(coupled_ops, y) == pytest.approx(y, abs=1e-10)

    def test_projection_is_weighted_orthogonal(self, coupled_space, coupled_ops):
        x = np.random.default_rng(7).standard_normal(coupled_space.n_dofs)
        y = project_solenoidal(coupled_ops, x)
        assert abs(y @ (coupled_ops.M_w @ (x - y))) < 1e-10 * (x @ (coupled_ops.M_w @ x))

    @pytest.mark.parametrize("ops_name", ["pinned_ops", "coupled_ops"])
    def test_projection_is_idempotent(self, ops_name, request):
        ops = request.getfixturevalue(ops_name)
        x = np.random.default_rng(8).standard_normal(ops.space.n_dofs)
        y = project_solenoidal(ops, x)
        assert np.linalg.norm(project_solenoidal(ops, y) - y) < 1e-12 * np.linalg.norm(x)

    @pytest.mark.parametrize("ops_name", ["pinned_ops", "coupled_ops"])
    def test_discrete_gradient_is_removed(self, ops_name, request):
        """M_w^{-1} B^T q has no solenoidal part"""
        ops = request.getfixturevalue(ops_name)
        q = np.random.default_rng(9).standard_normal(ops.B.shape[0])
        g = spsolve(ops.M_w.tocsc(), ops.B.T @ q)
        assert np.linalg.norm(g) > 0
        assert np.linalg.norm(project_solenoidal(ops, g)) < 1e-10 * np.linalg.norm(g)

    def test_gradient_norm_matches_deformation(self, pinned_space, pinned_ops):
        """||grad u||^2 = 2 ||D u||^2 up to 10 h^2 for solenoidal fields vanishing on the boundary"""
        h = pinned_space.mesh.mesh_size
        rng = np.random.default_rng(10)
        for _ in range(5):
            x = project_solenoidal(pinned_ops, rng.standard_normal(pinned_space.n_dofs))
            ratio = (x @ (pinned_ops.G @ x)) / (x @ (pinned_ops.A @ x))
            assert 1.0 - 10 * h ** 2 <= ratio <= 1.0 + 1e-12

    def test_gradient_norm_matches_deformation_on_fine_modes(self, fine_pinned_ops):
        h = fine_pinned_ops.space.mesh.mesh_size
        basis = stokes_fsi_modes(fine_pinned_ops, 4)
        for i in range(basis.count):
            x = basis.modes[:, i]
            ratio = (x @ (fine_pinned_ops.G @ x)) / (x @ (fine_pinned_ops.A @ x))
            assert ratio == pytest.approx(1.0, abs=10 * h ** 2)

class TestSanity:
    """Test cases for the embedding constants"""

    def test_coupled_constants(self, coupled_ops):
        report = sanity_constants(coupled_ops, n_modes=5)
        assert report.kappa0_exponent == 4
        assert report.kappa1 > 0
        assert report.kappa0 > 0

    def test_pinned_has_no_rigid_constant(self, pinned_ops):
        assert sanity_constants(pinned_ops, n_modes=3).kappa1 == 0.0

    def test_rigid_constant_settles_under_refinement(self, coupled_ops, fine_coupled_ops):
        coarse = sanity_constants(coupled_ops, n_modes=2).kappa1
        fine = sanity_constants(fine_coupled_ops, n_modes=2).kappa1
        assert 0 < fine <= 1.05 * coarse

class TestExport:
    """Test cases for coordinate export"""

    def test_export_matrix(self, tmp_path):
        M = sparse.csr_matrix(np.array([[1.0, 0.0], [0.25, 3.0]]))
        path = export_matrix(M, tmp_path / "m.txt")
        lines = path.read_text().splitlines()
        assert lines[0] == "# 2 2 3"
        assert "1 0 0.25" in lines

if __name__ == "__main__":
    pytest.main([__file__])
