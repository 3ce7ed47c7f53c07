"""
Tests for eigenvalue-path tracing and bifurcation certification
"""

from types import SimpleNamespace

import numpy as np
import pytest
from scipy import sparse

from src.bifurcation import (
    COMPLEX_PAIR,
    NO_CANDIDATE,
    PATH_JUMP,
    BranchBaseFlow,
    EigenPath,
    FrozenBaseFlow,
    PathEvaluator,
    PathSample,
    Pencil,
    certify,
    detect_crossing,
    linearized_eigenpath,
    linearized_pencil,
    report,
    simplicity_check,
    trace_path,
    transversality,
)
from src.exceptions import FDInconclusive, InvalidEigenvector, PathJump
from src.models import EigenMethod, SimplicityResult, TransversalityResult, Verdict
from src.steady import Branch, solve_steady

def _diag_pencil(values):
    n = len(values)
    return Pencil(K=sparse.diags(np.asarray(values, dtype=float)).tocsr(), A=sparse.identity(n, format="csr"))

def _path(lambdas, mus, flags=None):
    flags = flags or [[] for _ in lambdas]
    return EigenPath(samples=[PathSample(lam=l, mu=complex(m), cluster=np.array([m]), flags=list(f))
                              for l, m, f in zip(lambdas, mus, flags)])

def _simplicity(kernel_dimension=1, unsolvable=True):
    return SimplicityResult(lambda_s=2.0, kernel_dimension=kernel_dimension, cluster_tol=1e-6,
                            range_residual=1.0 if unsolvable else 0.0, range_tol=1e-3,
                            range_unsolvable=unsolvable, dense=True,
                            simple=kernel_dimension == 1 and unsolvable)

def _transversal(nonzero=True):
    return TransversalityResult(lambda_s=2.0, step=1e-3, coarse=0.5, fine=0.5, mu_prime=0.5,
                                crossing_slope=-0.5, noise=1e-9, nonzero=nonzero)

@pytest.fixture(scope="module")
def stokes_flow(pinned_space, pinned_ops, params):
    return solve_steady(pinned_space, params, opset=pinned_ops).u_full

class TestCrossing:
    """Test cases for detect_crossing"""

    def test_linear_interpolation(self):
        path = _path([1.0, 2.0, 3.0], [0.5, 0.9, 1.3])
        assert detect_crossing(path) == pytest.approx([2.25])

    def test_refined_with_evaluator(self):
        path = _path([1.0, 2.0, 3.0], [0.6, 0.9, 1.4])
        crossings = detect_crossing(path, evaluator=lambda lam: 0.1 * lam ** 2 + 0.5, tol=1e-10)
        assert crossings == pytest.approx([np.sqrt(5.0)], abs=1e-9)

    def test_complex_samples_skipped(self):
        path = _path([1.0, 2.0, 3.0], [0.5, 1.5, 0.7], flags=[[], [COMPLEX_PAIR], []])
        assert detect_crossing(path) == []

    def test_no_crossing(self):
        assert detect_crossing(_path([0.0, 1.0], [0.0, 0.5], flags=[[NO_CANDIDATE], []])) == []

    def test_exact_hit(self):
        assert detect_crossing(_path([1.0, 2.0], [0.5, 1.0])) == [2.0]

class TestTransversality:
    """Test cases for the finite-difference derivative"""

    def test_linear_path(self):
        result = transversality(2.0, lambda lam: 0.5 * lam)
        assert result.mu_prime == pytest.approx(0.5, rel=1e-10)
        assert result.crossing_slope == pytest.approx(-0.5, rel=1e-10)
        assert result.nonzero

    @pytest.mark.parametrize("lam_s", [0.5, 7.0, 120.0])
    def test_frozen_base_flow_slope(self, lam_s):
        """mu = lambda / lambda_s has crossing slope -1/lambda_s"""
        result = transversality(lam_s, lambda lam: lam / lam_s)
        assert result.crossing_slope == pytest.approx(-1.0 / lam_s, rel=1e-4)

    def test_step_limited_near_zero(self):
        assert transversality(0.002, lambda lam: lam).step == pytest.approx(0.0005)

    def test_flat_path_unresolved(self):
        assert not transversality(2.0, lambda lam: 1.0).nonzero

    def test_inconsistent_stencils(self):
        with pytest.raises(FDInconclusive) as info:
            transversality(2.0, lambda lam: 1.0 if lam > 2.0006 else 0.0, step=1e-3)
        assert info.value.coarse != info.value.fine

class TestSimplicity:
    """Test cases for simplicity_check"""

    def test_simple_eigenvalue(self):
        result = simplicity_check(1.0, _diag_pencil([1, 2, 3, 4, 5]), np.eye(5)[0])
        assert result.kernel_dimension == 1
        assert result.range_unsolvable
        assert result.simple

    def test_repeated_eigenvalue(self):
        result = simplicity_check(1.0, _diag_pencil([1, 1, 3, 4, 5]), np.eye(5)[0])
        assert result.kernel_dimension == 2
        assert not result.simple

    def test_jordan_block_range_solvable(self):
        K = sparse.csr_matrix(np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 4.0]]))
        pencil = Pencil(K=K, A=sparse.identity(3, format="csr"))
        result = simplicity_check(1.0, pencil, np.eye(3)[0], method=EigenMethod.DENSE)
        assert not result.range_unsolvable

    @pytest.mark.parametrize("W1", [np.zeros(5), np.full(5, np.nan), np.ones(4)])
    def test_invalid_eigenvector(self, W1):
        with pytest.raises(InvalidEigenvector):
            simplicity_check(1.0, _diag_pencil([1, 2, 3, 4, 5]), W1)

class TestReport:
    """Test cases for verdict selection"""

    def test_no_candidate(self):
        assert report(None).verdict == Verdict.NO_CANDIDATE

    def test_eigenvalue_not_reached(self):
        assert report(2.0, 0.9, _simplicity(), _transversal()).verdict == Verdict.NO_CANDIDATE

    def test_multiple(self):
        r = report(2.0, 1.0, _simplicity(kernel_dimension=2), _transversal())
        assert r.verdict == Verdict.MULTIPLE_EIGENVALUE
        assert r.kernel_dimension == 2

    def test_range_solvable(self):
        assert report(2.0, 1.0, _simplicity(unsolvable=False), _transversal()).verdict == Verdict.RANGE_SOLVABLE

    def test_transversality_unresolved(self):
        r = report(2.0, 1.0, _simplicity(), None, transversality_error="stencils disagree")
        assert r.verdict == Verdict.TRANSVERSALITY_UNRESOLVED
        assert r.transversality_error == "stencils disagree"

    def test_certified(self):
        r = report(2.0, 1.0 + 1e-9, _simplicity(), _transversal())
        assert r.verdict == Verdict.CERTIFIED
        assert r.failed_conditions == []
        assert r.thresholds["range_tol"] == 1e-3

class TestPathTracing:
    """Test cases for path sampling and linking"""

    def _evaluator(self, vectors):
        samples = {float(i): PathSample(lam=float(i), mu=complex(0.5), cluster=np.array([0.5]), right=v)
                   for i, v in enumerate(vectors, start=1)}
        return SimpleNamespace(sample=lambda lam: samples[lam],
                               opset=SimpleNamespace(M_w=sparse.identity(2, format="csr")))

    def test_overlap_recorded(self):
        v = np.array([1.0, 0.0])
        path = trace_path(self._evaluator([v, v]), [2.0, 1.0])
        assert path.lambdas == [1.0, 2.0]
        assert path.samples[1].overlap == pytest.approx(1.0)

    def test_jump_flagged(self):
        path = trace_path(self._evaluator([np.array([1.0, 0.0]), np.array([0.0, 1.0])]), [1.0, 2.0])
        assert PATH_JUMP in path.samples[1].flags

    def test_jump_strict(self):
        with pytest.raises(PathJump):
            trace_path(self._evaluator([np.array([1.0, 0.0]), np.array([0.0, 1.0])]), [1.0, 2.0], strict=True)

class TestLinearizedPencil:
    """Test cases on the discretized problem"""

    def test_frozen_pencil_is_linear_in_lambda(self, pinned_ops, stokes_flow):
        K1 = linearized_pencil(pinned_ops, stokes_flow, 1.0).K
        K3 = linearized_pencil(pinned_ops, stokes_flow, 3.0).K
        assert abs(K3 - 3.0 * K1).max() < 1e-12 * max(abs(K3).max(), 1.0)

    def test_frozen_base_flow(self, stokes_flow):
        flow = FrozenBaseFlow(stokes_flow)
        assert flow(0.5) is flow(7.0)

    def test_zero_lambda_sample(self, pinned_ops, stokes_flow):
        evaluator = PathEvaluator(pinned_ops, FrozenBaseFlow(stokes_flow))
        s = evaluator.sample(0.0)
        assert NO_CANDIDATE in s.flags
        assert evaluator(0.0) == 0.0

    def test_sample_normalization(self, pinned_ops, stokes_flow):
        evaluator = PathEvaluator(pinned_ops, FrozenBaseFlow(stokes_flow), method=EigenMethod.DENSE)
        s = evaluator.sample(50.0)
        if not s.usable:
            pytest.skip("nearest eigenvalue is complex on this mesh")
        assert s.right @ (pinned_ops.M_w @ s.right) == pytest.approx(1.0)
        assert s.pairing == pytest.approx(1.0)
        assert s.adjoint_residual < 1e-8
        assert s.chi.shape == (2,)

    def test_unpinned_space_rejected(self, coupled_space, params):
        with pytest.raises(ValueError):
            linearized_eigenpath(Branch(), coupled_space, params, [0.0, 1.0])

    def test_empty_branch_base_flow(self, pinned_space, params):
        with pytest.raises(ValueError):
            BranchBaseFlow(Branch(), pinned_space, params)

    @pytest.mark.slow
    def test_frozen_window_certification(self, pinned_ops, stokes_flow):
        """A frozen-base-flow crossing has slope -1/lambda_s"""
        evaluator = PathEvaluator(pinned_ops, FrozenBaseFlow(stokes_flow), method=EigenMethod.DENSE)
        path = trace_path(evaluator, np.linspace(0.0, 200.0, 9))
        reports = certify(evaluator, path)
        found = [r for r in reports if r.transversality is not None]
        if not found:
            pytest.skip("no real crossing of 1 in the window on this mesh")
        for r in found:
            assert r.mu_residual < 1e-6
            assert r.transversality.crossing_slope == pytest.approx(-1.0 / r.lambda_s, rel=1e-4)

if __name__ == "__main__":
    pytest.main([__file__])
