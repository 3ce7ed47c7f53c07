"""
Tests for legacy VTK export and import
"""

import numpy as np
import pytest

from src.exceptions import MeshFailure
from src.geometry import BodyShape, FacetTag, build_annulus_mesh
from src.models import BodyKind
from src.vtk_io import read_vtk, write_vtk

@pytest.fixture(scope="module")
def mesh():
    return build_annulus_mesh(BodyShape.ellipse(1.0, 0.6), R=3.0, h=0.5)

class TestVtkRoundTrip:
    """Test cases for write_vtk / read_vtk"""

    def test_geometry_and_tags_survive(self, mesh, tmp_path):
        path = write_vtk(mesh, tmp_path / "mesh.vtk")
        back = read_vtk(path)
        assert back.dimension == 2
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.cells, mesh.cells)
        assert np.array_equal(back.facet_tags, mesh.facet_tags)
        assert back.outer_radius == mesh.outer_radius
        assert back.mesh_size == mesh.mesh_size

    def test_body_recorded_in_title(self, mesh, tmp_path):
        back = read_vtk(write_vtk(mesh, tmp_path / "mesh.vtk"))
        assert back.body.kind == BodyKind.ELLIPSE
        assert back.body.semi_axes == pytest.approx(mesh.body.semi_axes)

    def test_point_data_does_not_disturb_reading(self, mesh, tmp_path):
        velocity = np.ones((mesh.num_vertices, 2))
        path = write_vtk(mesh, tmp_path / "snap.vtk", point_data={"velocity": velocity,
                                                                  "speed": velocity[:, 0]})
        text = path.read_text()
        assert "VECTORS velocity double" in text
        assert "SCALARS speed double 1" in text
        back = read_vtk(path)
        assert (back.facet_tags == FacetTag.BODY).sum() == (mesh.facet_tags == FacetTag.BODY).sum()

    def test_not_a_vtk_file(self, tmp_path):
        path = tmp_path / "junk.vtk"
        path.write_text("hello\nworld\n")
        with pytest.raises(MeshFailure):
            read_vtk(path)

    def test_missing_tags(self, mesh, tmp_path):
        path = write_vtk(mesh, tmp_path / "mesh.vtk")
        text = path.read_text().split("CELL_DATA")[0]
        path.write_text(text)
        with pytest.raises(MeshFailure):
            read_vtk(path)

if __name__ == "__main__":
    pytest.main([__file__])
