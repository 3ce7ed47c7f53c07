"""
Legacy ASCII VTK export and import of tagged meshes
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .exceptions import MeshFailure
from .geometry import BodyShape, Mesh, check_mesh
from .models import BodyKind

logger = logging.getLogger(__name__)

VTK_LINE = 3
VTK_TRIANGLE = 5
VTK_TETRA = 10

def _title(mesh: Mesh) -> str:
    parts = [
        "fsilab",
        f"dimension={mesh.dimension}",
        f"R={mesh.outer_radius!r}",
        f"h={mesh.mesh_size!r}",
        f"symmetric={int(mesh.symmetric)}",
    ]
    if mesh.body is not None and mesh.body.polygon is None:
        axes = ",".join(repr(a) for a in mesh.body.semi_axes)
        parts.append(f"body={mesh.body.kind.value}:{axes}:{mesh.body.scale!r}")
    return " ".join(parts)

def write_vtk(mesh: Mesh, file_path: Union[str, Path],
              point_data: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """
    Write cells and tagged boundary facets as one unstructured grid.

    The integer cell field facet_tag is 0 on volume cells and carries the
    boundary tag on facet cells. point_data entries are (n_vertices,) scalars
    or (n_vertices, d) vectors.
    """
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = mesh.dimension
    cell_type = VTK_TRIANGLE if d == 2 else VTK_TETRA
    facet_type = VTK_LINE if d == 2 else VTK_TRIANGLE
    n_total = mesh.num_cells + len(mesh.facets)
    size = mesh.num_cells * (d + 2) + len(mesh.facets) * (d + 1)

    with path.open("w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(_title(mesh) + "\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")

        f.write(f"POINTS {mesh.num_vertices} double\n")
        pts = mesh.vertices if d == 3 else np.column_stack([mesh.vertices, np.zeros(mesh.num_vertices)])
        np.savetxt(f, pts, fmt="%.17g")

        f.write(f"CELLS {n_total} {size}\n")
        np.savetxt(f, np.column_stack([np.full(mesh.num_cells, d + 1), mesh.cells]), fmt="%d")
        np.savetxt(f, np.column_stack([np.full(len(mesh.facets), d), mesh.facets]), fmt="%d")

        f.write(f"CELL_TYPES {n_total}\n")
        types = np.concatenate([np.full(mesh.num_cells, cell_type), np.full(len(mesh.facets), facet_type)])
        np.savetxt(f, types, fmt="%d")

        f.write(f"CELL_DATA {n_total}\n")
        f.write("SCALARS facet_tag int 1\nLOOKUP_TABLE default\n")
        np.savetxt(f, np.concatenate([np.zeros(mesh.num_cells, dtype=int), mesh.facet_tags]), fmt="%d")

        if point_data:
            f.write(f"POINT_DATA {mesh.num_vertices}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    np.savetxt(f, values, fmt="%.17g")
                else:
                    if values.shape[1] == 2:
                        values = np.column_stack([values, np.zeros(len(values))])
                    f.write(f"VECTORS {name} double\n")
                    np.savetxt(f, values, fmt="%.17g")

    logger.info(f"Wrote VTK mesh to {path}")
    return path

def _parse_title(line: str) -> Dict[str, str]:
    fields = {}
    for token in line.split()[1:]:
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    return fields

def _body_from_title(value: str) -> BodyShape:
    kind, axes, scale = value.split(":")
    semi_axes = tuple(float(a) for a in axes.split(","))
    return BodyShape(kind=BodyKind(kind), semi_axes=semi_axes, scale=float(scale))

def read_vtk(file_path: Union[str, Path], outer_radius: Optional[float] = None,
             mesh_size: Optional[float] = None) -> Mesh:
    """
    Read a mesh written by write_vtk, or any legacy ASCII grid of
    triangles/tetrahedra carrying a facet_tag cell field.
    """
    path = Path(file_path)
    tokens = path.read_text().split("\n")
    if len(tokens) < 4 or not tokens[0].startswith("# vtk"):
        raise MeshFailure(f"{path} is not a legacy VTK file")
    meta = _parse_title(tokens[1]) if tokens[1].startswith("fsilab") else {}
    words = " ".join(tokens[2:]).split()

    pos = 0
    points = cells = types = tags = None
    while pos < len(words):
        key = words[pos]
        if key == "POINTS":
            n = int(words[pos + 1])
            start = pos + 3
            points = np.array(words[start:start + 3 * n], dtype=float).reshape(n, 3)
            pos = start + 3 * n
        elif key == "CELLS":
            n, size = int(words[pos + 1]), int(words[pos + 2])
            flat = np.array(words[pos + 3:pos + 3 + size], dtype=np.int64)
            cells, i = [], 0
            for _ in range(n):
                k = flat[i]
                cells.append(flat[i + 1:i + 1 + k])
                i += k + 1
            pos = pos + 3 + size
        elif key == "CELL_TYPES":
            n = int(words[pos + 1])
            types = np.array(words[pos + 2:pos + 2 + n], dtype=int)
            pos = pos + 2 + n
        elif key == "SCALARS" and words[pos + 1] == "facet_tag":
            n = len(types)
            start = pos + 6
            tags = np.array(words[start:start + n], dtype=int)
            pos = start + n
        else:
            pos += 1

    if points is None or cells is None or types is None:
        raise MeshFailure(f"{path} lacks POINTS, CELLS or CELL_TYPES")
    if tags is None:
        raise MeshFailure(f"{path} lacks the facet_tag cell field")

    dimension = 3 if np.any(types == VTK_TETRA) else 2
    cell_type = VTK_TETRA if dimension == 3 else VTK_TRIANGLE
    facet_type = VTK_TRIANGLE if dimension == 3 else VTK_LINE
    volume = np.array([c for c, t in zip(cells, types) if t == cell_type], dtype=np.int64)
    is_facet = (types == facet_type) & (tags > 0)
    facets = np.array([c for c, f in zip(cells, is_facet) if f], dtype=np.int64)
    vertices = points[:, :dimension].copy()

    R = outer_radius if outer_radius is not None else float(meta.get("R", np.linalg.norm(vertices, axis=1).max()))
    h = mesh_size if mesh_size is not None else float(meta.get("h", "nan"))
    body = _body_from_title(meta["body"]) if "body" in meta else None
    mesh = Mesh(
        dimension=dimension,
        vertices=vertices,
        cells=volume,
        facets=facets,
        facet_tags=tags[is_facet].astype(np.int64),
        outer_radius=R,
        mesh_size=h,
        body=body,
        symmetric=bool(int(meta.get("symmetric", "0"))),
    )
    if np.isfinite(h):
        check_mesh(mesh)
    logger.info(f"Read {dimension}-D mesh from {path}: {mesh.num_cells} cells")
    return mesh
