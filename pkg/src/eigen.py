"""
Eigen-solvers for pencils restricted to the discrete divergence-free subspace

Every routine has a dense path (null-space basis of B, then LAPACK) used as
oracle and below the dense limit, and an ARPACK path whose operator
applications are constrained saddle solves, so Krylov vectors stay in ker B.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs, eigsh, splu

from .config import settings
from .exceptions import EigSolveFailure, SaddleSolveFailure
from .models import EigenMethod
from .saddle import SaddleSystem

logger = logging.getLogger(__name__)

@dataclass(frozen=True, eq=False)
class Constraint:
    """Divergence constraint B x = 0 with pressure gauge m; B None means unconstrained"""
    B: Optional[sparse.spmatrix] = None
    m: Optional[np.ndarray] = None

    @classmethod
    def of(cls, opset) -> "Constraint":
        return cls(B=opset.B, m=opset.pressure_mean)

    def dimension(self, n: int) -> int:
        return n if self.B is None else n - self.B.shape[0] + 1

    def basis(self, n: int) -> np.ndarray:
        if self.B is None:
            return np.eye(n)
        return linalg.null_space(self.B.toarray())

    def solver(self, K: sparse.spmatrix, transpose: bool = False):
        """Callable f -> velocity part of the constrained solve with K"""
        if self.B is None:
            mat = sparse.csc_matrix(K.T if transpose else K)
            try:
                lu = splu(mat)
            except RuntimeError as e:
                raise SaddleSolveFailure(f"factorization failed: {e}") from e
            return lu.solve
        system = SaddleSystem(K, self.B, self.m, transpose=transpose)
        return lambda f: system.solve(f)[0]

def use_dense(n_constrained: int, method: EigenMethod = EigenMethod.AUTO, limit: Optional[int] = None) -> bool:
    if method == EigenMethod.DENSE:
        return True
    if method == EigenMethod.ITERATIVE:
        return False
    return n_constrained <= (limit or settings.DENSE_EIG_LIMIT)

def _as_dense(S) -> np.ndarray:
    return S.toarray() if sparse.issparse(S) else np.asarray(S)

def _is_zero(S) -> bool:
    if sparse.issparse(S):
        return S.nnz == 0 or abs(S).max() == 0.0
    return not np.any(S)

def _start_vector(solve, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = solve(rng.standard_normal(n))
    return v / np.linalg.norm(v)

def largest_symmetric(S, G, constraint: Constraint, method: EigenMethod = EigenMethod.AUTO,
                      tol: Optional[float] = None, seed: int = 0) -> Tuple[float, np.ndarray]:
    """
    Largest theta of S x = theta G x on ker B (S symmetric, G positive definite).

    Returns theta and a G-normalized maximizer.
    """
    tol = tol or settings.EIG_TOL
    n = S.shape[0]
    n_c = constraint.dimension(n)
    if n_c < 1:
        raise EigSolveFailure("constrained space is empty")

    if _is_zero(S):
        x = _start_vector(constraint.solver(G), n, seed) if constraint.B is not None else np.eye(n)[:, 0]
        return 0.0, x / np.sqrt(x @ (G @ x))

    if use_dense(n_c, method) or n_c < 8:
        Z = constraint.basis(n)
        Sz = Z.T @ _as_dense(S @ Z)
        Gz = Z.T @ _as_dense(G @ Z)
        try:
            w, V = linalg.eigh(0.5 * (Sz + Sz.T), 0.5 * (Gz + Gz.T))
        except linalg.LinAlgError as e:
            raise EigSolveFailure(f"dense symmetric eigensolve failed: {e}") from e
        x = Z @ V[:, -1]
        theta = float(w[-1])
    else:
        gsolve = constraint.solver(G)
        Minv = LinearOperator((n, n), matvec=lambda v: gsolve(np.asarray(v).ravel()), dtype=float)
        k = min(4, n_c - 2)
        try:
            w, V = eigsh(S, k=k, M=G, Minv=Minv, which="LA", v0=_start_vector(gsolve, n, seed),
                         tol=tol, maxiter=20 * n)
        except (ArpackNoConvergence, ArpackError) as e:
            raise EigSolveFailure(f"ARPACK failed on the symmetric pencil: {e}") from e
        i = int(np.argmax(w))
        x = V[:, i]
        theta = float(x @ (S @ x)) / float(x @ (G @ x))

    x = x / np.sqrt(x @ (G @ x))
    logger.debug(f"largest_symmetric: theta={theta:.12g}, constrained dim={n_c}")
    return theta, x

def smallest_symmetric(A, M, constraint: Constraint, k: int, method: EigenMethod = EigenMethod.AUTO,
                       tol: Optional[float] = None, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """k smallest eigenpairs of A x = mu M x on ker B (A, M symmetric positive definite), M-orthonormal"""
    tol = tol or settings.EIG_TOL
    n = A.shape[0]
    n_c = constraint.dimension(n)
    if k > n_c:
        raise EigSolveFailure(f"requested {k} eigenpairs but the constrained space has dimension {n_c}")

    if use_dense(n_c, method) or k >= n_c - 1:
        Z = constraint.basis(n)
        Az = Z.T @ _as_dense(A @ Z)
        Mz = Z.T @ _as_dense(M @ Z)
        try:
            w, V = linalg.eigh(0.5 * (Az + Az.T), 0.5 * (Mz + Mz.T), subset_by_index=[0, k - 1])
        except linalg.LinAlgError as e:
            raise EigSolveFailure(f"dense symmetric eigensolve failed: {e}") from e
        return w, Z @ V

    asolve = constraint.solver(A)
    OPinv = LinearOperator((n, n), matvec=lambda v: asolve(np.asarray(v).ravel()), dtype=float)
    try:
        w, V = eigsh(A, k=k, M=M, sigma=0.0, OPinv=OPinv, which="LM",
                     v0=_start_vector(asolve, n, seed), tol=tol, maxiter=20 * n)
    except (ArpackNoConvergence, ArpackError) as e:
        raise EigSolveFailure(f"ARPACK failed on the Stokes pencil: {e}") from e

    # Rayleigh-Ritz on the returned subspace
    Ar = V.T @ (A @ V)
    Mr = V.T @ (M @ V)
    w, Q = linalg.eigh(0.5 * (Ar + Ar.T), 0.5 * (Mr + Mr.T))
    return w, V @ Q

def nearest_eigenvalues(K, A, constraint: Constraint, target: float, k: int = 6,
                        method: EigenMethod = EigenMethod.AUTO, tol: Optional[float] = None,
                        seed: int = 0) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    Eigenvalues of K x = mu A x on ker B nearest to target, sorted by distance.

    Returns (mu, right vectors, left vectors); left vectors are computed only
    on the dense path (None otherwise).
    """
    tol = tol or settings.EIG_TOL
    n = K.shape[0]
    n_c = constraint.dimension(n)

    if use_dense(n_c, method) or k >= n_c - 1:
        Z = constraint.basis(n)
        Kz = Z.T @ _as_dense(K @ Z)
        Az = Z.T @ _as_dense(A @ Z)
        try:
            w, vl, vr = linalg.eig(Kz, Az, left=True, right=True)
        except linalg.LinAlgError as e:
            raise EigSolveFailure(f"dense eigensolve failed: {e}") from e
        order = np.argsort(np.abs(w - target))[:k]
        return w[order], Z @ vr[:, order], Z @ vl[:, order]

    shifted = constraint.solver((K - target * A).tocsc())
    OPinv = LinearOperator((n, n), matvec=lambda v: shifted(np.asarray(v).ravel()), dtype=float)
    try:
        w, V = eigs(K, k=k, M=A, sigma=target, OPinv=OPinv, which="LM",
                    v0=_start_vector(shifted, n, seed), tol=tol, maxiter=20 * n)
    except (ArpackNoConvergence, ArpackError) as e:
        raise EigSolveFailure(f"ARPACK failed on the linearized pencil: {e}") from e
    order = np.argsort(np.abs(w - target))
    return w[order], V[:, order], None

def left_vector(K, A, constraint: Constraint, mu: float, right: np.ndarray, iterations: int = 3) -> np.ndarray:
    """Left eigenvector w with w^T (K - mu A) = 0 on ker B, by inverse iteration on the transpose"""
    shift = mu + 1e-8 * max(1.0, abs(mu))
    solve = constraint.solver((K - shift * A).tocsc(), transpose=True)
    w = np.real_if_close(right).astype(float)
    for _ in range(iterations):
        w = solve(A @ w)
        w /= np.linalg.norm(w)
    return w

def gram_schmidt(V: np.ndarray, M) -> np.ndarray:
    """Modified Gram-Schmidt in the M inner product, columns in index order"""
    V = np.array(V, dtype=float, copy=True)
    for i in range(V.shape[1]):
        for j in range(i):
            V[:, i] -= (V[:, j] @ (M @ V[:, i])) * V[:, j]
        V[:, i] /= np.sqrt(V[:, i] @ (M @ V[:, i]))
    return V
