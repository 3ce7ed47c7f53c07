"""
Meshes of the truncated exterior domain B_R minus the body
"""

import math
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import ellipe

from .exceptions import EmptyDomain, MeshFailure
from .models import BodyKind, BodySection, MeshQuality

logger = logging.getLogger(__name__)

class FacetTag(IntEnum):
    """Boundary facet tags"""
    BODY = 1
    OUTER = 2

# Relative tolerance of the on-boundary checks, in units of h
BOUNDARY_TOL = 1e-12

@dataclass(frozen=True)
class BodyShape:
    """Star-shaped rigid body centred at the origin, rescaled to unit diameter"""
    kind: BodyKind
    semi_axes: Tuple[float, ...]
    scale: float = 1.0
    polygon: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    # -- constructors -------------------------------------------------------

    @classmethod
    def disk(cls, radius: float = 0.5) -> "BodyShape":
        return cls._axis_aligned(BodyKind.DISK, (radius,))

    @classmethod
    def sphere(cls, radius: float = 0.5) -> "BodyShape":
        return cls._axis_aligned(BodyKind.SPHERE, (radius,))

    @classmethod
    def ellipse(cls, a: float, b: float) -> "BodyShape":
        return cls._axis_aligned(BodyKind.ELLIPSE, (a, b))

    @classmethod
    def ellipsoid(cls, a: float, b: float, c: float) -> "BodyShape":
        return cls._axis_aligned(BodyKind.ELLIPSOID, (a, b, c))

    @classmethod
    def _axis_aligned(cls, kind: BodyKind, axes: Tuple[float, ...]) -> "BodyShape":
        if any(a <= 0 for a in axes):
            raise ValueError(f"semi-axes must be positive, got {axes}")
        scale = 1.0 / (2.0 * max(axes))
        return cls(kind=kind, semi_axes=tuple(a * scale for a in axes), scale=scale)

    @classmethod
    def from_polygon(cls, vertices: np.ndarray) -> "BodyShape":
        """
        Build a polygonal body from its vertices.

        The polygon is moved so its area centroid sits at the origin, rescaled
        to unit diameter and oriented counter-clockwise. It must be star-shaped
        with respect to the centroid.
        """
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise MeshFailure("polygon needs at least three 2-D vertices")
        x, y = pts[:, 0], pts[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        area = 0.5 * cross.sum()
        if abs(area) < 1e-14:
            raise MeshFailure("degenerate polygon")
        centroid = np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)
        pts = pts - centroid
        if area < 0:
            pts = pts[::-1]
        scale = 1.0 / pdist(pts).max()
        pts = pts * scale

        angles = np.arctan2(pts[:, 1], pts[:, 0])
        start = int(np.argmin(angles))
        pts = np.roll(pts, -start, axis=0)
        angles = np.roll(angles, -start)
        if np.any(np.diff(angles) <= 0):
            raise MeshFailure("polygon is not star-shaped about its centroid")
        pts.setflags(write=False)
        return cls(kind=BodyKind.POLYFILE, semi_axes=(), scale=scale, polygon=pts)

    @classmethod
    def from_polygon_file(cls, path: Union[str, Path]) -> "BodyShape":
        """Two whitespace-separated columns per line; '#' starts a comment"""
        data = np.loadtxt(path, comments="#", ndmin=2)
        return cls.from_polygon(data[:, :2])

    @classmethod
    def from_section(cls, section: BodySection, dimension: int) -> "BodyShape":
        kind = section.kind
        axes = tuple(section.semi_axes)
        if kind == BodyKind.POLYFILE:
            if not section.poly_file:
                raise MeshFailure("body kind 'polyfile' requires poly_file")
            body = cls.from_polygon_file(section.poly_file)
        elif kind in (BodyKind.DISK, BodyKind.SPHERE):
            body = cls._axis_aligned(kind, (axes[0],))
        elif kind == BodyKind.ELLIPSE:
            if len(axes) != 2:
                raise MeshFailure("ellipse needs two semi-axes")
            body = cls.ellipse(*axes)
        else:
            if len(axes) != 3:
                raise MeshFailure("ellipsoid needs three semi-axes")
            body = cls.ellipsoid(*axes)
        if body.dimension != dimension:
            raise MeshFailure(f"body kind {kind.value} is {body.dimension}-D but mesh dimension is {dimension}")
        return body

    # -- geometry -----------------------------------------------------------

    @property
    def dimension(self) -> int:
        return 3 if self.kind in (BodyKind.SPHERE, BodyKind.ELLIPSOID) else 2

    @property
    def circumradius(self) -> float:
        if self.polygon is not None:
            return float(np.linalg.norm(self.polygon, axis=1).max())
        return max(self.semi_axes)

    @property
    def is_mirror_symmetric(self) -> bool:
        """Invariance under x2 -> -x2 (and x3 -> -x3 in 3-D)"""
        if self.polygon is None:
            return True
        mirrored = self.polygon * np.array([1.0, -1.0])
        d = np.linalg.norm(self.polygon[:, None, :] - mirrored[None, :, :], axis=2)
        return bool(np.all(d.min(axis=1) < 1e-12))

    def boundary_radius(self, directions: np.ndarray) -> np.ndarray:
        """Distance from the origin to the boundary along unit directions (..., d)"""
        d = np.asarray(directions, dtype=float)
        if self.kind in (BodyKind.DISK, BodyKind.SPHERE):
            return np.full(d.shape[:-1], self.semi_axes[0])
        if self.kind in (BodyKind.ELLIPSE, BodyKind.ELLIPSOID):
            axes = np.asarray(self.semi_axes)
            return 1.0 / np.sqrt(((d / axes) ** 2).sum(axis=-1))
        return self._polygon_radius(d)

    def _polygon_radius(self, d: np.ndarray) -> np.ndarray:
        pts = self.polygon
        angles = np.arctan2(pts[:, 1], pts[:, 0])
        theta = np.arctan2(d[..., 1], d[..., 0])
        i = (np.searchsorted(angles, theta, side="right") - 1) % len(pts)
        p1 = pts[i]
        p2 = pts[(i + 1) % len(pts)]
        e = p2 - p1
        num = p1[..., 0] * e[..., 1] - p1[..., 1] * e[..., 0]
        den = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
        return num / den

    def boundary_measure(self) -> Optional[float]:
        """Analytic perimeter (2-D) or surface area (3-D); None when not closed-form"""
        if self.kind == BodyKind.DISK:
            return 2.0 * math.pi * self.semi_axes[0]
        if self.kind == BodyKind.SPHERE:
            return 4.0 * math.pi * self.semi_axes[0] ** 2
        if self.kind == BodyKind.ELLIPSE:
            a, b = max(self.semi_axes), min(self.semi_axes)
            return float(4.0 * a * ellipe(1.0 - (b / a) ** 2))
        if self.polygon is not None:
            return float(np.linalg.norm(np.roll(self.polygon, -1, axis=0) - self.polygon, axis=1).sum())
        return None

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        """Radial distance |x| - r_b(x/|x|); zero exactly on the boundary"""
        r = np.linalg.norm(points, axis=1)
        return np.abs(r - self.boundary_radius(points / r[:, None]))

@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh of the annular domain with tagged boundary facets"""
    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    outer_radius: float
    mesh_size: float
    body: Optional[BodyShape] = None
    symmetric: bool = False

    def __post_init__(self):
        for arr in (self.vertices, self.cells, self.facets, self.facet_tags):
            arr.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def cell_measures(self) -> np.ndarray:
        return np.abs(_signed_measures(self.vertices, self.cells))

    def facet_measures(self, tag: Optional[FacetTag] = None) -> np.ndarray:
        facets = self.facets if tag is None else self.facets[self.facet_tags == tag]
        p = self.vertices[facets]
        if self.dimension == 2:
            return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def tagged_vertices(self, tag: FacetTag) -> np.ndarray:
        return np.unique(self.facets[self.facet_tags == tag])

def _signed_measures(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    jac = p[:, 1:] - p[:, :1]
    return np.linalg.det(jac) / math.factorial(vertices.shape[1])

def _orient(vertices: np.ndarray, cells: np.ndarray, h: float) -> np.ndarray:
    """Flip negatively oriented cells; raise on degenerate ones"""
    cells = cells.copy()
    vol = _signed_measures(vertices, cells)
    d = vertices.shape[1]
    if np.any(np.abs(vol) <= 1e-14 * h ** d):
        bad = int(np.argmin(np.abs(vol)))
        raise MeshFailure(f"degenerate cell {bad} with measure {vol[bad]:.3e}")
    neg = vol < 0
    cells[neg, -2], cells[neg, -1] = cells[neg, -1], cells[neg, -2].copy()
    return cells

def _mirror_key(points: np.ndarray) -> np.ndarray:
    """Mirror-invariant sort key (x1, |x2|, |x3|) per point, as a sortable record"""
    key = np.abs(points)
    key[:, 0] = points[:, 0]
    return key

def _radial_grading(n_equiv: int, gap: float, h: float) -> np.ndarray:
    """Geometric layer fractions 0 = g_0 < ... < g_m = 1 with first layer about h"""
    q = 1.0 + 2.0 * math.pi / n_equiv
    m = max(2, math.ceil(math.log(1.0 + gap * (q - 1.0) / h) / math.log(q)))
    k = np.arange(m + 1)
    g = (q ** k - 1.0) / (q ** m - 1.0)
    g[-1] = 1.0
    return g

def _ordered(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Sort each row of vertex indices by the lexicographic mirror key"""
    order = np.lexsort(tuple(keys[:, c] for c in reversed(range(keys.shape[1]))))
    rank = np.empty(len(keys), dtype=int)
    rank[order] = np.arange(len(keys))
    return np.take_along_axis(idx, np.argsort(rank[idx], axis=1), axis=1)

def build_annulus_mesh(body: BodyShape, R: float, h: float, symmetric: bool = True) -> Mesh:
    """
    Generate a graded simplicial mesh of B_R minus the body.

    Args:
        body: unit-diameter body shape
        R: outer truncation radius
        h: nominal mesh size along the body boundary
        symmetric: make the mesh invariant under x2 -> -x2 (and x3 -> -x3)

    Returns:
        Mesh with BODY and OUTER facets tagged
    """
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    if R <= body.circumradius:
        raise EmptyDomain(f"R={R} does not exceed the body circumradius {body.circumradius:.6g}")
    if R <= 0.5 + h:
        raise ValueError(f"R={R} must exceed diam/2 + h = {0.5 + h}")
    if symmetric and not body.is_mirror_symmetric:
        raise MeshFailure("symmetric mesh requested for a body without mirror symmetry")

    if body.dimension == 2:
        vertices, cells, facets, tags = _annulus_2d(body, R, h, symmetric)
    else:
        vertices, cells, facets, tags = _shell_3d(body, R, h, symmetric)

    cells = _orient(vertices, cells, h)
    mesh = Mesh(
        dimension=body.dimension,
        vertices=vertices,
        cells=cells,
        facets=facets,
        facet_tags=tags,
        outer_radius=float(R),
        mesh_size=float(h),
        body=body,
        symmetric=symmetric,
    )
    check_mesh(mesh)
    logger.info(f"Built {mesh.dimension}-D mesh: {mesh.num_vertices} vertices, {mesh.num_cells} cells, R={R}, h={h}")
    return mesh

def _annulus_2d(body: BodyShape, R: float, h: float, symmetric: bool):
    perimeter = body.boundary_measure()
    n = max(8, 2 * math.ceil(perimeter / (2.0 * h)))
    half = n // 2
    theta = 2.0 * math.pi * np.arange(half + 1) / n
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    upper[0] = [1.0, 0.0]
    upper[half] = [-1.0, 0.0]
    if symmetric:
        lower = upper[1:half][::-1] * np.array([1.0, -1.0])
    else:
        t = 2.0 * math.pi * np.arange(half + 1, n) / n
        lower = np.column_stack([np.cos(t), np.sin(t)])
    directions = np.vstack([upper, lower])

    r_body = body.boundary_radius(directions)
    g = _radial_grading(n, R - r_body.min(), h)
    m = len(g) - 1
    radii = r_body[None, :] + (R - r_body)[None, :] * g[:, None]
    radii[-1] = R
    vertices = (radii[:, :, None] * directions[None, :, :]).reshape(-1, 2)

    j = np.arange(n)
    jn = (j + 1) % n
    ring = _ordered(_mirror_key(directions), np.column_stack([j, jn]))
    cells = []
    for k in range(m):
        a, b = ring[:, 0] + k * n, ring[:, 1] + k * n
        cells.append(np.column_stack([a, b, b + n]))
        cells.append(np.column_stack([a, a + n, b + n]))
    cells = np.vstack(cells)

    facets = np.vstack([np.column_stack([j, jn]), np.column_stack([j, jn]) + m * n])
    tags = np.concatenate([np.full(n, FacetTag.BODY), np.full(n, FacetTag.OUTER)]).astype(np.int64)
    return vertices, cells, facets, tags

def _octahedron_lattice(k: int):
    """Unit directions and triangles of a k-times subdivided octahedron"""
    index: Dict[Tuple[int, int, int], int] = {}
    lattice = []
    triangles = []

    def vid(t):
        if t not in index:
            index[t] = len(lattice)
            lattice.append(t)
        return index[t]

    for s1 in (1, -1):
        for s2 in (1, -1):
            for s3 in (1, -1):
                def p(i, j):
                    return vid((s1 * i, s2 * j, s3 * (k - i - j)))
                for i in range(k):
                    for j in range(k - i):
                        triangles.append((p(i, j), p(i + 1, j), p(i, j + 1)))
                        if i + j <= k - 2:
                            triangles.append((p(i + 1, j), p(i + 1, j + 1), p(i, j + 1)))
    lat = np.array(lattice, dtype=float)
    mag = np.abs(lat)
    directions = np.sign(lat) * (mag / np.linalg.norm(mag, axis=1)[:, None])
    return directions, np.array(triangles, dtype=np.int64)

def _shell_3d(body: BodyShape, R: float, h: float, symmetric: bool):
    k = max(1, math.ceil(0.5 * math.pi * body.circumradius / h))
    directions, tris = _octahedron_lattice(k)
    ns = len(directions)
    r_body = body.boundary_radius(directions)
    g = _radial_grading(4 * k, R - r_body.min(), h)
    m = len(g) - 1
    radii = r_body[None, :] + (R - r_body)[None, :] * g[:, None]
    radii[-1] = R
    vertices = (radii[:, :, None] * directions[None, :, :]).reshape(-1, 3)

    tris_sorted = _ordered(_mirror_key(directions), tris)
    cells = []
    for layer in range(m):
        a, b, c = (tris_sorted[:, i] + layer * ns for i in range(3))
        cells.append(np.column_stack([a, b, c, c + ns]))
        cells.append(np.column_stack([a, b, b + ns, c + ns]))
        cells.append(np.column_stack([a, a + ns, b + ns, c + ns]))
    cells = np.vstack(cells)

    facets = np.vstack([tris, tris + m * ns])
    tags = np.concatenate([np.full(len(tris), FacetTag.BODY), np.full(len(tris), FacetTag.OUTER)]).astype(np.int64)
    return vertices, cells, facets, tags

def boundary_facets(cells: np.ndarray) -> np.ndarray:
    """Facets belonging to exactly one cell, each sorted"""
    d1 = cells.shape[1]
    faces = np.vstack([np.delete(cells, i, axis=1) for i in range(d1)])
    faces = np.sort(faces, axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    return uniq[counts == 1]

def check_mesh(mesh: Mesh) -> None:
    """Raise MeshFailure unless every Mesh invariant holds"""
    vol = _signed_measures(mesh.vertices, mesh.cells)
    if np.any(vol <= 0):
        raise MeshFailure(f"{int((vol <= 0).sum())} cells with nonpositive measure")

    tagged = np.sort(mesh.facets, axis=1)
    if len(np.unique(tagged, axis=0)) != len(tagged):
        raise MeshFailure("a boundary facet is tagged twice")
    bnd = boundary_facets(mesh.cells)
    if len(bnd) != len(tagged) or not np.array_equal(np.unique(tagged, axis=0), bnd):
        raise MeshFailure("tagged facets do not cover the boundary exactly")

    tol = BOUNDARY_TOL * mesh.mesh_size
    outer = mesh.vertices[mesh.tagged_vertices(FacetTag.OUTER)]
    err = np.abs(np.linalg.norm(outer, axis=1) - mesh.outer_radius).max()
    if err > max(tol, 8 * np.finfo(float).eps * mesh.outer_radius):
        raise MeshFailure(f"OUTER vertex off the sphere |x|=R by {err:.3e}")
    if mesh.body is not None:
        inner = mesh.vertices[mesh.tagged_vertices(FacetTag.BODY)]
        err = mesh.body.distance_to_boundary(inner).max()
        if err > max(tol, 8 * np.finfo(float).eps):
            raise MeshFailure(f"BODY vertex off the body boundary by {err:.3e}")

def mesh_quality(mesh: Mesh) -> MeshQuality:
    """Geometric diagnostics used by the CLI and the tests"""
    measures = mesh.cell_measures()
    outer = mesh.vertices[mesh.tagged_vertices(FacetTag.OUTER)]
    inner = mesh.vertices[mesh.tagged_vertices(FacetTag.BODY)]
    body_dist = float(mesh.body.distance_to_boundary(inner).max()) if mesh.body is not None else float("nan")
    return MeshQuality(
        dimension=mesh.dimension,
        num_vertices=mesh.num_vertices,
        num_cells=mesh.num_cells,
        min_cell_measure=float(measures.min()),
        max_cell_measure=float(measures.max()),
        body_facets=int((mesh.facet_tags == FacetTag.BODY).sum()),
        outer_facets=int((mesh.facet_tags == FacetTag.OUTER).sum()),
        body_measure=float(mesh.facet_measures(FacetTag.BODY).sum()),
        outer_measure=float(mesh.facet_measures(FacetTag.OUTER).sum()),
        max_body_distance=body_dist,
        max_outer_distance=float(np.abs(np.linalg.norm(outer, axis=1) - mesh.outer_radius).max()),
    )

def _projector(mesh: Mesh, tag: FacetTag) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    if tag == FacetTag.OUTER:
        def radius(d):
            return np.full(d.shape[0], mesh.outer_radius)
    elif mesh.body is not None:
        radius = mesh.body.boundary_radius
    else:
        return None

    def project(points: np.ndarray) -> np.ndarray:
        if mesh.symmetric:
            mag = np.abs(points)
            mag[:, 0] = points[:, 0]
            sign = np.where(points < 0, -1.0, 1.0)
            sign[:, 0] = 1.0
        else:
            mag, sign = points, np.ones_like(points)
        d = mag / np.linalg.norm(mag, axis=1)[:, None]
        return d * radius(d)[:, None] * sign
    return project

def _edge_midpoints(mesh: Mesh, local_edges):
    """Global edge list and midpoint vertex index for every local cell edge"""
    pairs = np.sort(np.stack([mesh.cells[:, [a, b]] for a, b in local_edges], axis=1), axis=2)
    edges, inverse = np.unique(pairs.reshape(-1, 2), axis=0, return_inverse=True)
    mid_index = mesh.num_vertices + inverse.reshape(len(mesh.cells), len(local_edges))
    return edges, mid_index

def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement; new boundary vertices are projected onto the exact boundary"""
    d = mesh.dimension
    local_edges = [(0, 1), (0, 2), (1, 2)] if d == 2 else [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    edges, mid = _edge_midpoints(mesh, local_edges)
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])

    edge_lookup = {tuple(e): mesh.num_vertices + i for i, e in enumerate(edges)}
    facet_edges = [(0, 1)] if d == 2 else [(0, 1), (0, 2), (1, 2)]
    for tag in (FacetTag.BODY, FacetTag.OUTER):
        project = _projector(mesh, tag)
        if project is None:
            continue
        fac = mesh.facets[mesh.facet_tags == tag]
        ids = np.unique([edge_lookup[tuple(sorted((f[a], f[b])))] for f in fac for a, b in facet_edges])
        loc = ids - mesh.num_vertices
        midpoints[loc] = project(midpoints[loc])
    vertices = np.vstack([mesh.vertices, midpoints])

    c = mesh.cells
    if d == 2:
        m01, m02, m12 = mid[:, 0], mid[:, 1], mid[:, 2]
        cells = np.vstack([
            np.column_stack([c[:, 0], m01, m02]),
            np.column_stack([m01, c[:, 1], m12]),
            np.column_stack([m02, m12, c[:, 2]]),
            np.column_stack([m01, m12, m02]),
        ])
        f = mesh.facets
        fm = np.array([edge_lookup[tuple(sorted(e))] for e in f])
        facets = np.vstack([np.column_stack([f[:, 0], fm]), np.column_stack([fm, f[:, 1]])])
        tags = np.concatenate([mesh.facet_tags, mesh.facet_tags])
    else:
        m01, m02, m03, m12, m13, m23 = (mid[:, i] for i in range(6))
        corner = [
            np.column_stack([c[:, 0], m01, m02, m03]),
            np.column_stack([m01, c[:, 1], m12, m13]),
            np.column_stack([m02, m12, c[:, 2], m23]),
            np.column_stack([m03, m13, m23, c[:, 3]]),
        ]
        diagonals = [(m01, m23, (m02, m13), (m03, m12)),
                     (m02, m13, (m01, m23), (m03, m12)),
                     (m03, m12, (m01, m23), (m02, m13))]
        lengths = np.stack([np.linalg.norm(vertices[p] - vertices[q], axis=1) for p, q, _, _ in diagonals], axis=1)
        choice = np.argmin(lengths, axis=1)
        inner = []
        for which, (p, q, (a, a2), (b, b2)) in enumerate(diagonals):
            sel = choice == which
            for x, y in ((a, b), (b, a2), (a2, b2), (b2, a)):
                inner.append(np.column_stack([p[sel], q[sel], x[sel], y[sel]]))
        cells = np.vstack(corner + inner)
        f = mesh.facets
        mab = np.array([edge_lookup[tuple(sorted((t[0], t[1])))] for t in f])
        mac = np.array([edge_lookup[tuple(sorted((t[0], t[2])))] for t in f])
        mbc = np.array([edge_lookup[tuple(sorted((t[1], t[2])))] for t in f])
        facets = np.vstack([
            np.column_stack([f[:, 0], mab, mac]),
            np.column_stack([mab, f[:, 1], mbc]),
            np.column_stack([mac, mbc, f[:, 2]]),
            np.column_stack([mab, mbc, mac]),
        ])
        tags = np.tile(mesh.facet_tags, 4)

    fine_h = 0.5 * mesh.mesh_size
    cells = _orient(vertices, cells, fine_h)
    refined = Mesh(
        dimension=d,
        vertices=vertices,
        cells=cells,
        facets=facets,
        facet_tags=tags,
        outer_radius=mesh.outer_radius,
        mesh_size=fine_h,
        body=mesh.body,
        symmetric=mesh.symmetric,
    )
    check_mesh(refined)
    logger.info(f"Refined mesh: {mesh.num_cells} -> {refined.num_cells} cells, h={fine_h}")
    return refined

def mesh_from_config(body_section: BodySection, R: float, h: float, dimension: int,
                     refinements: int = 0) -> Mesh:
    """Mesh described by the [body] and [mesh] config sections"""
    body = BodyShape.from_section(body_section, dimension)
    mesh = build_annulus_mesh(body, R, h, symmetric=body_section.symmetric)
    for _ in range(refinements):
        mesh = refine(mesh)
    return mesh
