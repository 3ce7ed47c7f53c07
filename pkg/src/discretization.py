"""
Coupled fluid/rigid-body finite element space and operator assembly

Velocity is continuous P2, pressure continuous P1 (Taylor-Hood). Full nodal
velocity vectors are component-major: entry k * n_nodes + i is component k at
node i. Reduced unknowns x = (interior nodal velocities, rigid velocity)
are mapped to full fields by the prolongation P, which copies the rigid
velocity onto every BODY node and zero onto every OUTER node.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg, sparse

from .config import settings
from .exceptions import QuadratureFailure, UnsupportedDegree
from .geometry import FacetTag, Mesh
from .models import NondimParams, PhysicalParams, SanityReport
from .saddle import SaddleSystem

logger = logging.getLogger(__name__)

LOCAL_EDGES = {
    2: [(0, 1), (0, 2), (1, 2)],
    3: [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
}

# Forcing hook: quadrature points (c, q, d) -> (f (c, q, d), F (c, q, d, d)) for the load (f, v) + (F, grad v)
Forcing = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]

def nondimensionalize(phys: PhysicalParams) -> NondimParams:
    """lambda = VL/nu, omega_n^2 = L^4 ell / (M nu^2), varpi = rho L^3 / M"""
    return NondimParams(
        lam=phys.V * phys.L / phys.nu,
        omega_n2=phys.L ** 4 * phys.ell / (phys.M * phys.nu ** 2),
        varpi=phys.rho * phys.L ** 3 / phys.M,
    )

def physical_elongation(chi0: np.ndarray, phys: PhysicalParams) -> np.ndarray:
    """Dimensional spring displacement of a nondimensional elongation"""
    return phys.L * np.asarray(chi0)

# ---------------------------------------------------------------------------
# Reference element
# ---------------------------------------------------------------------------

def duffy_rule(dim: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference simplex"""
    t, w = leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    if dim == 2:
        u, v = np.meshgrid(t, t, indexing="ij")
        wu, wv = np.meshgrid(w, w, indexing="ij")
        points = np.column_stack([u.ravel(), (v * (1 - u)).ravel()])
        weights = (wu * wv * (1 - u)).ravel()
    else:
        u, v, s = np.meshgrid(t, t, t, indexing="ij")
        wu, wv, ws = np.meshgrid(w, w, w, indexing="ij")
        points = np.column_stack([u.ravel(), (v * (1 - u)).ravel(), (s * (1 - u) * (1 - v)).ravel()])
        weights = (wu * wv * ws * (1 - u) ** 2 * (1 - v)).ravel()
    return points, weights

def barycentric(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dim = points.shape[1]
    lam = np.column_stack([1.0 - points.sum(axis=1), points])
    grad = np.vstack([-np.ones(dim), np.eye(dim)])
    return lam, grad

def p2_basis(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values (q, n_loc) and reference gradients (q, n_loc, d) of the P2 basis"""
    dim = points.shape[1]
    lam, glam = barycentric(points)
    values = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(dim + 1)]
    grads = [(4 * lam[:, i] - 1)[:, None] * glam[i][None, :] for i in range(dim + 1)]
    for a, b in LOCAL_EDGES[dim]:
        values.append(4 * lam[:, a] * lam[:, b])
        grads.append(4 * (lam[:, a][:, None] * glam[b][None, :] + lam[:, b][:, None] * glam[a][None, :]))
    return np.stack(values, axis=1), np.stack(grads, axis=1)

# ---------------------------------------------------------------------------
# Function space
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FsiSpace:
    """Taylor-Hood velocity/pressure space with d rigid translation unknowns"""
    mesh: Mesh
    degree: int
    pinned: bool
    nodes: np.ndarray
    cell_nodes: np.ndarray
    body_nodes: np.ndarray
    outer_nodes: np.ndarray
    interior_nodes: np.ndarray
    prolongation: sparse.csr_matrix
    spread: sparse.csr_matrix
    body_trace: sparse.csr_matrix
    det: np.ndarray
    inv_jac_t: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    phi: np.ndarray
    dphi_ref: np.ndarray
    psi: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.dimension

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_velocity(self) -> int:
        return self.dim * self.n_nodes

    @property
    def n_pressure(self) -> int:
        return self.mesh.num_vertices

    @property
    def n_dofs(self) -> int:
        return self.prolongation.shape[1]

    @property
    def n_interior(self) -> int:
        return self.dim * len(self.interior_nodes)

    @property
    def rigid(self) -> slice:
        """Position of the rigid velocity inside a reduced vector (empty when pinned)"""
        return slice(self.n_interior, self.n_dofs)

    @property
    def relative(self) -> sparse.csr_matrix:
        """Reduced vector -> full field of u minus its rigid part"""
        return (self.prolongation - self.spread).tocsr()

    @property
    def lifting(self) -> np.ndarray:
        """Full field equal to e_1 on BODY nodes and zero elsewhere"""
        return np.asarray(self.body_trace[:, 0].todense()).ravel()

    def full(self, x: np.ndarray) -> np.ndarray:
        return self.prolongation @ x

    def rigid_part(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.rigid]

    def chunks(self, size: Optional[int] = None) -> Iterator[slice]:
        size = size or settings.ASSEMBLY_CHUNK
        n = self.mesh.num_cells
        for start in range(0, n, size):
            yield slice(start, min(n, start + size))

    def gradients(self, cells: slice) -> Tuple[np.ndarray, np.ndarray]:
        """Physical basis gradients (c, q, n_loc, d) and weights times |J| (c, q)"""
        dphi = np.einsum("cij,qnj->cqni", self.inv_jac_t[cells], self.dphi_ref)
        wdet = self.det[cells, None] * self.quad_weights[None, :]
        return dphi, wdet

    def quadrature_coordinates(self, cells: slice = slice(None)) -> np.ndarray:
        """Physical coordinates (c, q, d) of the quadrature points"""
        lam, _ = barycentric(self.quad_points)
        X = self.mesh.vertices[self.mesh.cells[cells]]
        return np.einsum("qv,cvd->cqd", lam, X)

    def components(self, u_full: np.ndarray) -> np.ndarray:
        """(n_nodes, d) view of a full nodal field"""
        return np.asarray(u_full).reshape(self.dim, self.n_nodes).T

    def evaluate(self, u_full: np.ndarray, cells: slice = slice(None)) -> np.ndarray:
        """Field values (c, q, d) at quadrature points"""
        loc = self.components(u_full)[self.cell_nodes[cells]]
        return np.einsum("qn,cnk->cqk", self.phi, loc)

    def evaluate_gradient(self, u_full: np.ndarray, cells: slice, dphi: np.ndarray) -> np.ndarray:
        """Gradients (c, q, k, l) = d u_k / d x_l at quadrature points"""
        loc = self.components(u_full)[self.cell_nodes[cells]]
        return np.einsum("cqnl,cnk->cqkl", dphi, loc)

    def vertex_values(self, u_full: np.ndarray) -> np.ndarray:
        """Nodal values restricted to mesh vertices, (n_vertices, d)"""
        return self.components(u_full)[:self.mesh.num_vertices]

def _edge_codes(pairs: np.ndarray, nv: int) -> np.ndarray:
    pairs = np.sort(pairs, axis=-1)
    return pairs[..., 0].astype(np.int64) * nv + pairs[..., 1]

def build_fsi_space(mesh: Mesh, p_v: int = 2, pin_rigid: bool = False) -> FsiSpace:
    """
    Build the coupled space on a mesh.

    Args:
        mesh: tagged mesh of the truncated domain
        p_v: velocity degree (only 2 is available)
        pin_rigid: fix the rigid velocity to zero

    Raises:
        UnsupportedDegree: if p_v != 2
        QuadratureFailure: on degenerate cells
    """
    if p_v != 2:
        raise UnsupportedDegree(f"velocity degree {p_v} not available; Taylor-Hood P2/P1 requires p_v = 2")
    d = mesh.dimension
    nv = mesh.num_vertices
    nc = mesh.num_cells
    local = np.array(LOCAL_EDGES[d])

    codes = _edge_codes(mesh.cells[:, local], nv).ravel()
    uniq, inverse = np.unique(codes, return_inverse=True)
    cell_nodes = np.hstack([mesh.cells, nv + inverse.reshape(nc, len(local))])
    edges = np.column_stack([uniq // nv, uniq % nv])
    nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    nn = len(nodes)

    facet_local = np.array(LOCAL_EDGES[d - 1] if d == 3 else [(0, 1)])

    def boundary_nodes(tag: FacetTag) -> np.ndarray:
        fac = mesh.facets[mesh.facet_tags == tag]
        mids = nv + np.searchsorted(uniq, _edge_codes(fac[:, facet_local], nv).ravel())
        return np.unique(np.concatenate([fac.ravel(), mids]))

    body = boundary_nodes(FacetTag.BODY)
    outer = boundary_nodes(FacetTag.OUTER)
    interior = np.setdiff1d(np.arange(nn), np.union1d(body, outer))
    n_i = len(interior)
    n_x = d * n_i + (0 if pin_rigid else d)

    rows, cols = [], []
    for k in range(d):
        rows.append(k * nn + interior)
        cols.append(k * n_i + np.arange(n_i))
        if not pin_rigid:
            rows.append(k * nn + body)
            cols.append(np.full(len(body), d * n_i + k))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    prolongation = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(d * nn, n_x))

    if pin_rigid:
        spread = sparse.csr_matrix((d * nn, n_x))
    else:
        r = np.concatenate([k * nn + np.arange(nn) for k in range(d)])
        c = np.concatenate([np.full(nn, d * n_i + k) for k in range(d)])
        spread = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(d * nn, n_x))

    r = np.concatenate([k * nn + body for k in range(d)])
    c = np.concatenate([np.full(len(body), k) for k in range(d)])
    body_trace = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(d * nn, d))

    X = mesh.vertices[mesh.cells]
    jac = np.transpose(X[:, 1:] - X[:, :1], (0, 2, 1))
    det = np.linalg.det(jac)
    if np.any(det <= 1e-14 * mesh.mesh_size ** d):
        raise QuadratureFailure(f"degenerate cell {int(np.argmin(det))} (det J = {det.min():.3e})")
    inv_jac_t = np.transpose(np.linalg.inv(jac), (0, 2, 1))

    points, weights = duffy_rule(d, settings.QUADRATURE_POINTS)
    phi, dphi_ref = p2_basis(points)
    psi, _ = barycentric(points)

    space = FsiSpace(
        mesh=mesh, degree=p_v, pinned=pin_rigid, nodes=nodes, cell_nodes=cell_nodes,
        body_nodes=body, outer_nodes=outer, interior_nodes=interior,
        prolongation=prolongation, spread=spread, body_trace=body_trace,
        det=det, inv_jac_t=inv_jac_t, quad_points=points, quad_weights=weights,
        phi=phi, dphi_ref=dphi_ref, psi=psi,
    )
    logger.info(f"Built FSI space: {n_x} velocity unknowns, {space.n_pressure} pressures, pinned={pin_rigid}")
    return space

# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _scatter(blocks, rows, cols, shape) -> sparse.csr_matrix:
    """Sum local matrices (c, r, s) into a global sparse matrix"""
    data = np.concatenate([b.ravel() for b in blocks])
    r = np.concatenate([np.broadcast_to(ri[:, :, None], b.shape).ravel() for b, ri in zip(blocks, rows)])
    c = np.concatenate([np.broadcast_to(ci[:, None, :], b.shape).ravel() for b, ci in zip(blocks, cols)])
    return sparse.coo_matrix((data, (r, c)), shape=shape).tocsr()

def _sym(S: sparse.spmatrix) -> sparse.csr_matrix:
    return (0.5 * (S + S.T)).tocsr()

@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Assembled forms on one space; full-field matrices plus their reduced versions"""
    space: FsiSpace
    params: NondimParams
    mass_full: sparse.csr_matrix
    visc_full: sparse.csr_matrix
    grad_full: sparse.csr_matrix
    stream_full: sparse.csr_matrix
    div_full: sparse.csr_matrix
    pressure_mean: np.ndarray
    M_w: sparse.csr_matrix
    A: sparse.csr_matrix
    G: sparse.csr_matrix
    D1s: sparse.csr_matrix
    B: sparse.csr_matrix

    @property
    def rigid_identity(self) -> sparse.csr_matrix:
        n = self.space.n_dofs
        idx = np.arange(n)[self.space.rigid]
        return sparse.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=(n, n))

    def reduce(self, S: sparse.spmatrix, right: Optional[sparse.spmatrix] = None) -> sparse.csr_matrix:
        """P^T S R for a full-field matrix S (R defaults to P)"""
        P = self.space.prolongation
        return (P.T @ S @ (P if right is None else right)).tocsr()

    def advection(self, a_full: np.ndarray) -> sparse.csr_matrix:
        """N(a) with v^T N(a) u = c(a; u, v), skew-symmetric"""
        space = self.space
        blocks, rows = [], []
        for sl in space.chunks():
            dphi, wdet = space.gradients(sl)
            a = space.evaluate(a_full, sl)
            adv = np.einsum("cql,cqjl->cqj", a, dphi)
            T = np.einsum("cq,qi,cqj->cij", wdet, space.phi, adv)
            blocks.append(0.5 * (T - np.transpose(T, (0, 2, 1))))
            rows.append(space.cell_nodes[sl])
        scalar = _scatter(blocks, rows, rows, (space.n_nodes, space.n_nodes))
        return sparse.block_diag([scalar] * space.dim, format="csr")

    def advection_of(self, b_full: np.ndarray) -> sparse.csr_matrix:
        """C(b) with v^T C(b) a = c(a; b, v)"""
        space = self.space
        d, nn = space.dim, space.n_nodes
        per_block = {(k, l): ([], []) for k in range(d) for l in range(d)}
        for sl in space.chunks():
            dphi, wdet = space.gradients(sl)
            b = space.evaluate(b_full, sl)
            gb = space.evaluate_gradient(b_full, sl, dphi)
            idx = space.cell_nodes[sl]
            mass = np.einsum("cq,qi,qj->cqij", wdet, space.phi, space.phi)
            for k in range(d):
                for l in range(d):
                    first = np.einsum("cqij,cq->cij", mass, gb[:, :, k, l])
                    second = np.einsum("cq,qj,cqi,cq->cij", wdet, space.phi, dphi[..., l], b[:, :, k])
                    per_block[(k, l)][0].append(0.5 * (first - second))
                    per_block[(k, l)][1].append(idx)
        grid = [[_scatter(per_block[(k, l)][0], per_block[(k, l)][1], per_block[(k, l)][1], (nn, nn))
                 for l in range(d)] for k in range(d)]
        return sparse.bmat(grid, format="csr")

    def gradient_weight(self, b_full: np.ndarray, symmetric: bool = False) -> sparse.csr_matrix:
        """
        W(b) with v^T W(b) a = ((a . grad) b, v), plain quadrature.

        symmetric=True replaces grad b by D(b); then W is symmetric and
        u^T W u is unchanged for every u.
        """
        space = self.space
        d, nn = space.dim, space.n_nodes
        per_block = {(k, l): ([], []) for k in range(d) for l in range(d)}
        for sl in space.chunks():
            dphi, wdet = space.gradients(sl)
            gb = space.evaluate_gradient(b_full, sl, dphi)
            if symmetric:
                gb = 0.5 * (gb + np.swapaxes(gb, 2, 3))
            idx = space.cell_nodes[sl]
            mass = np.einsum("cq,qi,qj->cqij", wdet, space.phi, space.phi)
            for k in range(d):
                for l in range(d):
                    per_block[(k, l)][0].append(np.einsum("cqij,cq->cij", mass, gb[:, :, k, l]))
                    per_block[(k, l)][1].append(idx)
        grid = [[_scatter(per_block[(k, l)][0], per_block[(k, l)][1], per_block[(k, l)][1], (nn, nn))
                 for l in range(d)] for k in range(d)]
        return sparse.bmat(grid, format="csr")

    def trilinear(self, a_full: np.ndarray, u_full: np.ndarray, v_full: np.ndarray) -> float:
        return float(v_full @ (self.advection(a_full) @ u_full))

    def linearized_advection(self, u0_full: np.ndarray, relative: bool = True) -> sparse.csr_matrix:
        """Reduced P^T N(u0) P + P^T C(u0) R, R the relative (or plain) prolongation"""
        space = self.space
        right = space.relative if relative else space.prolongation
        return (self.reduce(self.advection(u0_full)) + self.reduce(self.advection_of(u0_full), right)).tocsr()

    def load_vector(self, forcing: Forcing) -> np.ndarray:
        """Full-field load (f, v) + (F, grad v) of a forcing hook"""
        space = self.space
        d, nn = space.dim, space.n_nodes
        out = np.zeros(d * nn)
        for sl in space.chunks():
            dphi, wdet = space.gradients(sl)
            f, F = forcing(space.quadrature_coordinates(sl))
            loc = np.einsum("cq,qi,cqk->cik", wdet, space.phi, f) + np.einsum("cq,cqkl,cqil->cik", wdet, F, dphi)
            idx = space.cell_nodes[sl]
            for k in range(d):
                np.add.at(out, k * nn + idx.ravel(), loc[:, :, k].ravel())
        return out

    def momentum_residual(self, u_full: np.ndarray, pi: np.ndarray, lam: float,
                          load: Optional[np.ndarray] = None) -> np.ndarray:
        """Full-field steady momentum residual A u + B^T pi - lam (D1 u - N(u) u) - load"""
        r = self.visc_full @ u_full + self.div_full.T @ pi
        if lam:
            r -= lam * (self.stream_full @ u_full - self.advection(u_full) @ u_full)
        if load is not None:
            r -= load
        return r

    def force(self, r_full: np.ndarray) -> np.ndarray:
        """Volume-consistent boundary integral of T n on the body from a full residual"""
        return self.space.body_trace.T @ r_full

    def traction(self, u_full: np.ndarray, pi: np.ndarray, lam: float,
                 load: Optional[np.ndarray] = None) -> np.ndarray:
        """Integral of T(u, p) n over the body boundary, n pointing into the body"""
        return self.force(self.momentum_residual(u_full, pi, lam, load))

    def saddle(self, K: sparse.spmatrix, transpose: bool = False) -> SaddleSystem:
        return SaddleSystem(K, self.B, self.pressure_mean, transpose=transpose)

def assemble(space: FsiSpace, params: NondimParams) -> OperatorSet:
    """
    Assemble mass, viscous, gradient, streaming and divergence forms.

    Raises:
        QuadratureFailure: on non-finite local matrices
    """
    d, nn, npr = space.dim, space.n_nodes, space.n_pressure
    M_loc, K_loc, T1_loc, rows = [], [], [], []
    X_loc = {(b, c): [] for b in range(d) for c in range(d)}
    B_loc = {k: [] for k in range(d)}
    prow, mean = [], np.zeros(npr)

    for sl in space.chunks():
        dphi, wdet = space.gradients(sl)
        idx = space.cell_nodes[sl]
        pidx = space.mesh.cells[sl]
        M_loc.append(np.einsum("cq,qi,qj->cij", wdet, space.phi, space.phi))
        K_loc.append(np.einsum("cq,cqid,cqjd->cij", wdet, dphi, dphi))
        T1_loc.append(np.einsum("cq,qi,cqj->cij", wdet, space.phi, dphi[..., 0]))
        for b in range(d):
            for c in range(d):
                X_loc[(b, c)].append(np.einsum("cq,cqi,cqj->cij", wdet, dphi[..., c], dphi[..., b]))
        for k in range(d):
            B_loc[k].append(np.einsum("cq,qp,cqj->cpj", wdet, space.psi, dphi[..., k]))
        np.add.at(mean, pidx.ravel(), np.einsum("cq,qp->cp", wdet, space.psi).ravel())
        rows.append(idx)
        prow.append(pidx)

    if not all(np.all(np.isfinite(m)) for m in M_loc + K_loc):
        raise QuadratureFailure("non-finite local matrix")

    shape = (nn, nn)
    M = _sym(_scatter(M_loc, rows, rows, shape))
    K = _sym(_scatter(K_loc, rows, rows, shape))
    T1 = _scatter(T1_loc, rows, rows, shape)
    X = {key: _scatter(val, rows, rows, shape) for key, val in X_loc.items()}

    mass_full = sparse.block_diag([M] * d, format="csr")
    grad_full = sparse.block_diag([K] * d, format="csr")
    stream_full = sparse.block_diag([T1] * d, format="csr")
    visc_full = _sym(sparse.bmat([[K + X[(b, c)] if b == c else X[(b, c)]
                                   for c in range(d)] for b in range(d)], format="csr"))
    div_full = sparse.hstack([_scatter(B_loc[k], prow, rows, (npr, nn)) for k in range(d)], format="csr")

    P = space.prolongation
    rigid = sparse.diags(np.r_[np.zeros(space.n_interior), np.ones(space.n_dofs - space.n_interior)])
    M_w = _sym(P.T @ mass_full @ P + rigid / params.varpi)
    A = _sym(P.T @ visc_full @ P)
    G = _sym(P.T @ grad_full @ P)
    D1 = P.T @ stream_full @ P
    D1s = (0.5 * (D1 - D1.T)).tocsr()
    B = (div_full @ P).tocsr()

    logger.info(f"Assembled operators: {space.n_dofs} reduced unknowns, {M_w.nnz} mass nonzeros")
    return OperatorSet(
        space=space, params=params, mass_full=mass_full, visc_full=visc_full, grad_full=grad_full,
        stream_full=stream_full, div_full=div_full, pressure_mean=mean,
        M_w=M_w, A=A, G=G, D1s=D1s, B=B,
    )

# ---------------------------------------------------------------------------
# Derived operations
# ---------------------------------------------------------------------------

def project_solenoidal(opset: OperatorSet, x: np.ndarray) -> np.ndarray:
    """
    Discrete Helmholtz projection in the weighted inner product.

    Solves M_w y + B^T q = M_w x, B y = 0; x - y = M_w^{-1} B^T q is the
    gradient part, whose rigid component is the boundary-pressure force.
    """
    y, _ = opset.saddle(opset.M_w).solve(opset.M_w @ x)
    return y

def constrained_dimension(opset: OperatorSet) -> int:
    """Dimension of the discrete divergence-free subspace"""
    return opset.space.n_dofs - opset.space.n_pressure + 1

def solenoidal_basis(opset: OperatorSet) -> np.ndarray:
    """Orthonormal basis of ker B (dense)"""
    return linalg.null_space(opset.B.toarray())

def sanity_constants(opset: OperatorSet, n_modes: int = 20) -> SanityReport:
    """
    Embedding constants of the discrete space.

    kappa1 is exact: the largest eigenvalue of the d x d matrix of rigid parts
    of the constrained solutions of (A/2) y = e_rigid. kappa0 is sampled over
    the lowest modified-Stokes modes, with exponent 4 in 2-D and 6 in 3-D.
    """
    # deferred: modal builds on this module
    from .modal import stokes_fsi_modes

    space = opset.space
    d = space.dim
    if space.pinned:
        kappa1 = 0.0
    else:
        solver = opset.saddle(0.5 * opset.A)
        W = np.zeros((d, d))
        for k in range(d):
            e = np.zeros(space.n_dofs)
            e[space.n_interior + k] = 1.0
            y, _ = solver.solve(e)
            W[:, k] = space.rigid_part(y)
        kappa1 = float(np.sqrt(max(linalg.eigvalsh(0.5 * (W + W.T)).max(), 0.0)))

    exponent = 4 if d == 2 else 6
    n = min(n_modes, constrained_dimension(opset) - 1)
    basis = stokes_fsi_modes(opset, n)
    kappa0 = 0.0
    for i in range(basis.count):
        x = basis.modes[:, i]
        u_full = space.full(x)
        total = 0.0
        for sl in space.chunks():
            _, wdet = space.gradients(sl)
            vals = space.evaluate(u_full, sl)
            total += float(np.sum(wdet * np.linalg.norm(vals, axis=2) ** exponent))
        norm_d = np.sqrt(0.5 * x @ (opset.A @ x))
        kappa0 = max(kappa0, total ** (1.0 / exponent) / norm_d)
    logger.info(f"Sanity constants: kappa0={kappa0:.6g} (L{exponent}), kappa1={kappa1:.6g}")
    return SanityReport(kappa0=kappa0, kappa0_exponent=exponent, kappa1=kappa1, samples=basis.count)

def export_matrix(matrix: sparse.spmatrix, file_path: Union[str, Path]) -> Path:
    """Write 'row col value' lines (0-based, 17 significant digits)"""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sparse.coo_matrix(matrix)
    with path.open("w") as f:
        f.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{r} {c} {v:.17g}\n")
    logger.info(f"Exported {coo.shape[0]}x{coo.shape[1]} matrix to {path}")
    return path
