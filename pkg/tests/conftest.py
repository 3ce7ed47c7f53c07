"""
Shared meshes, spaces and operators for the test suite
"""

import pytest

from src.discretization import assemble, build_fsi_space
from src.geometry import BodyShape, build_annulus_mesh, refine
from src.models import NondimParams

@pytest.fixture(scope="session")
def params():
    """Unit frequency and mass ratio"""
    return NondimParams(lam=0.0, omega_n2=1.0, varpi=1.0)

@pytest.fixture(scope="session")
def coarse_mesh():
    """Disk of unit diameter in B_2, a few hundred cells"""
    return build_annulus_mesh(BodyShape.disk(), R=2.0, h=0.5, symmetric=True)

@pytest.fixture(scope="session")
def pinned_space(coarse_mesh):
    return build_fsi_space(coarse_mesh, 2, pin_rigid=True)

@pytest.fixture(scope="session")
def coupled_space(coarse_mesh):
    return build_fsi_space(coarse_mesh, 2, pin_rigid=False)

@pytest.fixture(scope="session")
def pinned_ops(pinned_space, params):
    return assemble(pinned_space, params)

@pytest.fixture(scope="session")
def coupled_ops(coupled_space, params):
    return assemble(coupled_space, params)

@pytest.fixture(scope="session")
def fine_mesh(coarse_mesh):
    """One red refinement of the coarse mesh, boundary midpoints on the true curves"""
    return refine(coarse_mesh)

@pytest.fixture(scope="session")
def fine_pinned_ops(fine_mesh, params):
    return assemble(build_fsi_space(fine_mesh, 2, pin_rigid=True), params)

@pytest.fixture(scope="session")
def fine_coupled_ops(fine_mesh, params):
    return assemble(build_fsi_space(fine_mesh, 2, pin_rigid=False), params)
