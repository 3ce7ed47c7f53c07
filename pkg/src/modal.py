"""
Modified Stokes eigenproblem of the coupled fluid/rigid-body system

Finds the smallest eigenpairs of A psi + B^T phi = mu M_w psi, B psi = 0, with
M_w the weighted mass (fluid L2 plus varpi^-1 on the rigid velocity). The
modes are M_w-orthonormal and A-orthogonal and serve as the Galerkin basis of
the transient module.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy import sparse

from .config import settings
from .discretization import FsiSpace, OperatorSet, constrained_dimension
from .eigen import Constraint, gram_schmidt, smallest_symmetric
from .exceptions import BasisMismatch, ClusterWarning
from .models import EigenMethod, ModeReport
from .saddle import SaddleSystem

logger = logging.getLogger(__name__)

CLUSTER_TOL = 1e-8

MODE_THRESHOLDS = {
    "gram": 1e-10,
    "stiffness": 1e-8,
    "pde": 1e-6,
    "rigid_coupling": 1e-6,
}

@dataclass(frozen=True, eq=False)
class ModalBasis:
    """First N eigenpairs of the modified Stokes problem, ascending"""
    opset: OperatorSet = field(repr=False)
    eigenvalues: np.ndarray
    modes: np.ndarray
    pressures: np.ndarray
    clustered: bool = False
    gram_residual: float = 0.0

    @property
    def count(self) -> int:
        return self.modes.shape[1]

    @property
    def space(self) -> FsiSpace:
        return self.opset.space

    @property
    def rigid_parts(self) -> np.ndarray:
        """(N, d) matrix whose row i is the rigid velocity of mode i"""
        return self.modes[self.space.rigid, :].T

    def full_modes(self) -> np.ndarray:
        """Nodal velocity fields of all modes, (d * n_nodes, N)"""
        return self.space.prolongation @ self.modes

    def truncate(self, n: int) -> "ModalBasis":
        if not 1 <= n <= self.count:
            raise ValueError(f"cannot keep {n} of {self.count} modes")
        return replace(self, eigenvalues=self.eigenvalues[:n], modes=self.modes[:, :n],
                       pressures=self.pressures[:, :n])

def _projector(opset: OperatorSet) -> SaddleSystem:
    identity = sparse.identity(opset.space.n_dofs, format="csr")
    return SaddleSystem(identity, opset.B, opset.pressure_mean)

def recover_pressure(opset: OperatorSet, x: np.ndarray, mu: float,
                     system: Optional[SaddleSystem] = None) -> np.ndarray:
    """
    Pressure of an eigenpair from the saddle residual.

    r = A x - mu M_w x lies in the range of B^T for an exact eigenpair; the
    pressure is the least-squares solution of B^T phi = -r with zero mean.
    """
    r = opset.A @ x - mu * (opset.M_w @ x)
    _, q = (system or _projector(opset)).solve(r)
    return -q

def _normalize_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs

def stokes_fsi_modes(opset: OperatorSet, N: int, method: EigenMethod = EigenMethod.AUTO,
                     tol: Optional[float] = None, seed: int = 0) -> ModalBasis:
    """
    Compute the N smallest modified Stokes modes.

    Args:
        opset: operators on the (normally unpinned) coupled space
        N: number of modes, at most the constrained dimension (the full basis)
        method: dense, iterative or automatic eigen-solver selection

    Raises:
        EigSolveFailure: if the eigen-solver fails

    A ClusterWarning is issued (and the basis flagged) when two consecutive
    eigenvalues agree to 1e-8 relative; the split inside the cluster is then
    the Gram-Schmidt order of the solver output.
    """
    n_c = constrained_dimension(opset)
    if N < 1 or N > n_c:
        raise ValueError(f"N must satisfy 1 <= N <= {n_c}, got {N}")

    _, V = smallest_symmetric(opset.A, opset.M_w, Constraint.of(opset), N, method=method,
                              tol=tol or settings.EIG_TOL, seed=seed)
    V = _normalize_signs(gram_schmidt(V, opset.M_w))
    mu = np.einsum("ni,ni->i", V, opset.A @ V)
    order = np.argsort(mu, kind="stable")
    mu, V = mu[order], V[:, order]

    clustered = bool(np.any(np.abs(np.diff(mu)) < CLUSTER_TOL * mu[:-1]))
    if clustered:
        warnings.warn(f"numerically repeated eigenvalues among the first {N} modes", ClusterWarning)
        logger.warning(f"Modal basis of {N} modes contains an eigenvalue cluster")

    system = _projector(opset)
    pressures = np.column_stack([recover_pressure(opset, V[:, i], mu[i], system) for i in range(N)])
    gram = V.T @ (opset.M_w @ V)
    gram_residual = float(np.abs(gram - np.eye(N)).max())
    logger.info(f"Computed {N} modified Stokes modes: mu in [{mu[0]:.8g}, {mu[-1]:.8g}], "
                f"Gram residual {gram_residual:.2e}")
    return ModalBasis(opset=opset, eigenvalues=mu, modes=V, pressures=pressures,
                      clustered=clustered, gram_residual=gram_residual)

def rigid_coupling_residuals(basis: ModalBasis, opset: Optional[OperatorSet] = None) -> List[float]:
    """|mu psi_hat - varpi * traction(psi, phi)| / (mu |psi_hat| + 1) per mode"""
    opset = opset or basis.opset
    space = opset.space
    varpi = opset.params.varpi
    out = []
    for i in range(basis.count):
        mu = float(basis.eigenvalues[i])
        u = space.full(basis.modes[:, i])
        rigid = space.rigid_part(basis.modes[:, i])
        # the eigen term enters the volume-consistent traction like a load
        traction = opset.traction(u, basis.pressures[:, i], 0.0, load=mu * (opset.mass_full @ u))
        out.append(float(np.linalg.norm(mu * rigid - varpi * traction) / (mu * np.linalg.norm(rigid) + 1.0)))
    return out

def verify_modes(basis: ModalBasis, opset: OperatorSet) -> ModeReport:
    """Gram, stiffness, PDE and rigid-coupling residuals of a basis against fixed thresholds"""
    if basis.modes.shape[0] != opset.space.n_dofs:
        raise BasisMismatch(f"basis has {basis.modes.shape[0]} rows, space has {opset.space.n_dofs} unknowns")
    V, mu = basis.modes, np.asarray(basis.eigenvalues)
    N = basis.count

    gram = V.T @ (opset.M_w @ V)
    gram_residual = float(np.abs(gram - np.eye(N)).max())
    stiff = V.T @ (opset.A @ V)
    scale = max(float(np.abs(mu).max()), 1e-300)
    stiffness_residual = float(np.abs(stiff - np.diag(mu)).max() / scale)

    pde = []
    for i in range(N):
        Mx = opset.M_w @ V[:, i]
        r = opset.A @ V[:, i] + opset.B.T @ basis.pressures[:, i] - mu[i] * Mx
        pde.append(float(np.linalg.norm(r) / max(abs(mu[i]) * np.linalg.norm(Mx), 1e-300)))
    coupling = rigid_coupling_residuals(basis, opset)

    sorted_ascending = bool(np.all(np.diff(mu) >= 0))
    positive = bool(np.all(mu > 0))
    failures = []
    if gram_residual >= MODE_THRESHOLDS["gram"]:
        failures.append(f"gram residual {gram_residual:.3e}")
    if stiffness_residual >= MODE_THRESHOLDS["stiffness"]:
        failures.append(f"stiffness residual {stiffness_residual:.3e}")
    if pde and max(pde) >= MODE_THRESHOLDS["pde"]:
        failures.append(f"PDE residual {max(pde):.3e}")
    if coupling and max(coupling) >= MODE_THRESHOLDS["rigid_coupling"]:
        failures.append(f"rigid coupling residual {max(coupling):.3e}")
    if not sorted_ascending:
        failures.append("eigenvalues not sorted ascending")
    if not positive:
        failures.append("non-positive eigenvalue")

    report = ModeReport(
        gram_residual=gram_residual, stiffness_residual=stiffness_residual,
        pde_residuals=pde, rigid_coupling_residuals=coupling,
        sorted_ascending=sorted_ascending, positive=positive,
        thresholds=dict(MODE_THRESHOLDS), failures=failures, passed=not failures,
    )
    if failures:
        logger.warning(f"Mode verification failed: {'; '.join(failures)}")
    return report
