import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cclift.errors import DimensionMismatch, RankDeficient
from cclift.linalg import (
    batched_least_norm,
    batched_truncated_solve,
    kernel_projector,
    least_norm_solve,
    pinv_op_norm_identity,
    pseudoinverse,
    smallest_singular_value,
    wedge_coordinates,
)


def _normal_equation_pinv(A):
    # independent route: A^T (A A^T)^{-1}
    A = np.asarray(A, float)
    return A.T @ np.linalg.inv(A @ A.T)


@st.composite
def full_row_rank(draw, max_rows=6, max_cols=9):
    p = draw(st.integers(1, max_rows))
    q = draw(st.integers(p, max_cols))
    A = draw(arrays(np.float64, (p, q), elements=st.floats(-3, 3, allow_nan=False, width=64)))
    A = A + np.hstack([np.eye(p) * 4.0, np.zeros((p, q - p))])
    return A


class TestPseudoinverse:
    def test_orthonormal_rows(self):
        A = [[1, 0, 0], [0, 1, 0]]
        np.testing.assert_allclose(pseudoinverse(A).pinv, [[1, 0], [0, 1], [0, 0]], atol=1e-15)

    def test_single_row(self):
        res = pseudoinverse([[1.0, 1.0]])
        np.testing.assert_allclose(res.pinv, [[0.5], [0.5]], atol=1e-15)
        assert res.sigma_min == pytest.approx(np.sqrt(2.0), rel=1e-14)
        assert res.op_norm_pinv == pytest.approx(1 / np.sqrt(2.0), rel=1e-14)

    def test_identity(self):
        np.testing.assert_allclose(pseudoinverse(np.eye(5)).pinv, np.eye(5), atol=1e-15)

    def test_rank_deficient_raises(self):
        with pytest.raises(RankDeficient) as info:
            pseudoinverse([[1.0, 2.0], [2.0, 4.0]])
        assert info.value.sigma_min < 1e-10

    def test_tall_matrix_rejected(self):
        with pytest.raises(DimensionMismatch):
            pseudoinverse(np.ones((3, 2)))

    def test_tolerance_override(self):
        A = np.array([[1.0, 0.0], [0.0, 1e-6]])
        pseudoinverse(A)
        with pytest.raises(RankDeficient):
            pseudoinverse(A, rank_tol=1e-3)

    @given(full_row_rank())
    def test_right_inverse_and_normal_equations(self, A):
        P = pseudoinverse(A).pinv
        assert np.linalg.norm(A @ P - np.eye(A.shape[0])) <= 1e-9
        np.testing.assert_allclose(P, _normal_equation_pinv(A), atol=1e-9)


class TestLeastNorm:
    def test_examples(self):
        np.testing.assert_allclose(least_norm_solve([[1, 1]], [2]), [1, 1], atol=1e-15)
        y = np.array([0.3, -2.0, 7.0])
        np.testing.assert_allclose(least_norm_solve(np.eye(3), y), y, atol=1e-15)

    def test_kkt_oracle(self):
        # minimize |x|^2 subject to Ax = y via the KKT system
        A = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        y = np.array([3.0, 4.0])
        K = np.block([[2 * np.eye(3), A.T], [A, np.zeros((2, 2))]])
        sol = np.linalg.solve(K, np.concatenate([np.zeros(3), y]))[:3]
        np.testing.assert_allclose(least_norm_solve(A, y), sol, atol=1e-14)
        np.testing.assert_allclose(sol, [3, 4, 0], atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            least_norm_solve([[1.0, 1.0]], [1.0, 2.0])

    @given(full_row_rank(), st.integers(0, 2**31 - 1))
    def test_minimal_among_solutions(self, A, seed):
        r = np.random.default_rng(seed)
        y = r.normal(size=A.shape[0])
        x = least_norm_solve(A, y)
        assert np.allclose(A @ x, y, atol=1e-9)
        P = kernel_projector(A)
        for _ in range(5):
            other = x + P @ r.normal(size=A.shape[1])
            assert np.allclose(A @ other, y, atol=1e-8)
            assert np.linalg.norm(x) <= np.linalg.norm(other) + 1e-12


class TestOperatorNorm:
    def test_diag(self):
        lhs, rhs = pinv_op_norm_identity([[2.0, 0.0], [0.0, 1.0]])
        assert lhs == pytest.approx(1.0, abs=1e-14)
        assert rhs == pytest.approx(1.0, abs=1e-14)

    def test_orthonormal(self):
        lhs, rhs = pinv_op_norm_identity([[1, 0, 0], [0, 1, 0]])
        assert lhs == pytest.approx(1.0) and rhs == pytest.approx(1.0)

    def test_random_against_eigen_oracle(self, rng):
        A = rng.normal(size=(4, 7))
        lhs, rhs = pinv_op_norm_identity(A)
        oracle = np.sqrt(np.linalg.eigvalsh(A @ A.T)[0])
        assert abs(lhs - rhs) <= 1e-8
        assert abs(rhs - oracle) <= 1e-10 * oracle

    @given(full_row_rank())
    def test_identity_holds(self, A):
        lhs, rhs = pinv_op_norm_identity(A)
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, rhs)
        assert smallest_singular_value(A) == pytest.approx(np.linalg.svd(A, compute_uv=False)[-1], rel=1e-9)


class TestWedge:
    def test_identity_columns(self):
        w = wedge_coordinates(np.eye(4)[:, :2])
        assert w.shape == (6,)
        np.testing.assert_array_equal(w, [1, 0, 0, 0, 0, 0])

    def test_three_by_two(self):
        np.testing.assert_allclose(wedge_coordinates([[1, 0], [0, 1], [0, 0]]), [1, 0, 0])

    def test_determinant_case(self):
        a, b, c, d = 1.5, -2.0, 0.25, 3.0
        np.testing.assert_allclose(wedge_coordinates([[a, c], [b, d]]), [a * d - b * c])

    @given(arrays(np.float64, (5, 3), elements=st.floats(-2, 2, allow_nan=False, width=64)))
    def test_alternating(self, V):
        W = V[:, [1, 0, 2]]
        np.testing.assert_allclose(wedge_coordinates(W), -wedge_coordinates(V), atol=1e-12)

    @given(arrays(np.float64, (5, 2), elements=st.floats(-2, 2, allow_nan=False, width=64)))
    def test_norm_is_gram_volume(self, V):
        # Cauchy-Binet: |V_1 ^ V_2|^2 = det(V^T V)
        w = wedge_coordinates(V)
        assert np.sum(w**2) == pytest.approx(np.linalg.det(V.T @ V), abs=1e-10)


class TestBatched:
    def test_least_norm_matches_single(self, rng):
        J = rng.normal(size=(20, 2, 5))
        r = rng.normal(size=(20, 2))
        x, ok = batched_least_norm(J, r)
        assert ok.all()
        for b in range(20):
            np.testing.assert_allclose(x[b], least_norm_solve(J[b], r[b]), atol=1e-12)

    def test_flags_singular(self):
        J = np.array([[[1.0, 2.0], [2.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]]])
        x, ok = batched_least_norm(J, np.ones((2, 2)))
        assert ok.tolist() == [False, True]
        np.testing.assert_array_equal(x[0], 0.0)

    def test_truncated_solve_on_rank_two_rows(self, rng):
        U = rng.normal(size=(3, 2))
        V = rng.normal(size=(2, 6))
        J = (U @ V)[None]
        target = J[0] @ rng.normal(size=6)
        x, ok = batched_truncated_solve(J, target[None], rank=2)
        assert ok[0]
        np.testing.assert_allclose(J[0] @ x[0], target, atol=1e-10)
        np.testing.assert_allclose(x[0], np.linalg.pinv(J[0]) @ target, atol=1e-10)
