"""
Sparse direct solves of bordered saddle-point systems

    [ K   B^T  0 ] [x]   [f]
    [ B   0    m ] [p] = [g]
    [ 0   m^T  0 ] [s]   [0]

The last row fixes the pressure gauge (mean zero against m); s is the
multiplier of that constraint and vanishes for consistent data.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, splu

from .exceptions import SaddleSolveFailure

logger = logging.getLogger(__name__)

class SaddleSystem:
    """LU factorization of one saddle-point matrix, reusable for many right-hand sides"""

    def __init__(self, K: sparse.spmatrix, B: sparse.spmatrix, m: np.ndarray, transpose: bool = False):
        self.n = K.shape[0]
        self.n_pressure = B.shape[0]
        mcol = sparse.csc_matrix(np.asarray(m, dtype=float).reshape(-1, 1))
        top = K.T if transpose else K
        matrix = sparse.bmat(
            [[top, B.T, None], [B, None, mcol], [None, mcol.T, None]],
            format="csc",
        )
        try:
            self._lu = splu(matrix)
        except RuntimeError as e:
            raise SaddleSolveFailure(f"saddle factorization failed: {e}") from e
        self.dtype = matrix.dtype

    def solve(self, f: np.ndarray, g: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Return (x, p) for momentum data f and divergence data g"""
        dtype = np.result_type(self.dtype, f.dtype, g.dtype if g is not None else np.float64)
        rhs = np.zeros(self.n + self.n_pressure + 1, dtype=dtype)
        rhs[:self.n] = f
        if g is not None:
            rhs[self.n:self.n + self.n_pressure] = g
        if np.iscomplexobj(rhs) and not np.issubdtype(self.dtype, np.complexfloating):
            sol = self._lu.solve(rhs.real) + 1j * self._lu.solve(rhs.imag)
        else:
            sol = self._lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SaddleSolveFailure("saddle solve produced non-finite values")
        return sol[:self.n], sol[self.n:self.n + self.n_pressure]

    def operator(self, apply_before=None) -> LinearOperator:
        """Velocity block of the inverse as a LinearOperator, optionally composed with a matrix"""
        def matvec(v):
            v = np.asarray(v).ravel()
            if apply_before is not None:
                v = apply_before @ v
            return self.solve(v)[0]
        return LinearOperator((self.n, self.n), matvec=matvec, dtype=self.dtype)
