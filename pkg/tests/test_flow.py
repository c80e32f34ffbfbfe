import numpy as np
import pytest
from hypothesis import given, strategies as st

from cclift.errors import BlowUp, DimensionMismatch
from cclift.fields import VectorField, enumerate_frame
from cclift.flow import (
    EMap,
    HVector,
    approx_exp,
    commutator_flow,
    e_jacobian,
    e_map,
    elementary_sequence,
    flow,
    homogeneous_norm,
    invert_sequence,
)
from cclift.systems import BUILTIN_NAMES, builtin


def heis_type():
    # X1 = dx, X2 = dy + x dz
    X1 = VectorField.coordinate(3, 0)
    X2 = VectorField.from_monomials(3, [[], [[1.0, [0, 0, 0]]], [[1.0, [1, 0, 0]]]])
    return [X1, X2]


def log_slope(ts, errs):
    return float(np.polyfit(np.log(ts), np.log(errs), 1)[0])


class TestFlow:
    def test_constant_field(self):
        np.testing.assert_allclose(flow(VectorField.coordinate(2, 0), [0.0, 0.0], 1.0), [1.0, 0.0], atol=1e-14)

    def test_xy_sum_closed_form(self):
        spec = builtin("xy-blowup")
        X = spec.generators[0] + spec.generators[1]
        np.testing.assert_allclose(flow(X, [1.0, 1.0], 0.5), [2.0, 2.0], rtol=1e-9)

    @pytest.mark.parametrize("t", [1.0, 1.5])
    def test_xy_sum_escapes(self, t):
        spec = builtin("xy-blowup")
        X = spec.generators[0] + spec.generators[1]
        with pytest.raises(BlowUp) as info:
            flow(X, [1.0, 1.0], t)
        assert info.value.t == pytest.approx(1.0, abs=1e-2)

    def test_zero_time_and_shape(self):
        X = VectorField.coordinate(2, 0)
        np.testing.assert_array_equal(flow(X, [0.5, 0.5], 0.0), [0.5, 0.5])
        with pytest.raises(DimensionMismatch):
            flow(X, [0.0, 0.0, 0.0], 1.0)

    @given(
        st.sampled_from(["heisenberg", "cierre", "cr-sphere", "siegel-degenerate"]),
        st.lists(st.floats(-1, 1), min_size=4, max_size=4),
        st.floats(-0.8, 0.8),
        st.floats(-0.8, 0.8),
        st.integers(0, 1),
    )
    def test_group_law(self, name, xs, t, s, j):
        spec = builtin(name)
        x = np.array(xs[: spec.dim])
        X = spec.generators[j]
        lhs = flow(X, flow(X, x, t), s)
        rhs = flow(X, x, t + s)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


class TestSequences:
    @pytest.mark.parametrize("word,n", [((1,), 1), ((1, 2), 4), ((1, 1, 2), 10), ((1, 2, 1, 2), 22)])
    def test_lengths(self, word, n):
        assert len(elementary_sequence(word)) == n

    def test_length_two_pattern(self):
        # exp(tX1), exp(tX2), exp(-tX1), exp(-tX2)
        assert elementary_sequence((1, 2)) == [(0, 1), (1, 1), (0, -1), (1, -1)]

    @given(st.lists(st.integers(1, 3), min_size=1, max_size=5))
    def test_inverse_is_involution(self, letters):
        seq = elementary_sequence(tuple(letters))
        assert invert_sequence(invert_sequence(seq)) == seq
        # each generator appears with zero net signed time
        if len(letters) > 1:
            for g in set(letters):
                assert sum(s for gg, s in seq if gg == g - 1) == 0


class TestCommutatorFlow:
    def test_length_one_is_flow(self):
        g = builtin("cierre").generators
        x = np.array([0.3, -0.1, 0.2])
        np.testing.assert_allclose(commutator_flow(g, (1,), 0.7, x), flow(g[0], x, 0.7), atol=1e-14)

    def test_commuting_fields_cancel(self):
        g = [VectorField.coordinate(2, 0), VectorField.coordinate(2, 1)]
        x = np.array([0.4, -1.0])
        for tau in (0.1, 0.5, 2.0):
            np.testing.assert_allclose(commutator_flow(g, (1, 2), tau, x), x, atol=1e-13)

    def test_heisenberg_type_area(self):
        y = commutator_flow(heis_type(), (1, 2), 0.1, np.zeros(3))
        np.testing.assert_allclose(y, [0.0, 0.0, 0.01], atol=1e-14)

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            commutator_flow(heis_type(), (1, 2), -0.1, np.zeros(3))


class TestApproxExp:
    def test_zero_time(self):
        x = np.array([0.2, 0.1, -0.3])
        np.testing.assert_array_equal(approx_exp(heis_type(), (1, 2), 0.0, x), x)

    def test_heisenberg_type_value(self):
        y = approx_exp(heis_type(), (1, 2), 0.01, np.zeros(3))
        np.testing.assert_allclose(y, [0.0, 0.0, 0.01], atol=1e-15)

    @given(
        st.sampled_from(["cierre", "cr-sphere", "siegel-degenerate", "grushin"]),
        st.sampled_from([(1, 2), (2, 1, 2), (1, 1, 2)]),
        st.floats(-0.5, 0.5).filter(lambda v: abs(v) > 1e-6),
    )
    def test_exact_inverse(self, name, word, t):
        spec = builtin(name)
        x = spec.base_point + 0.1
        y = approx_exp(spec.generators, word, t, x)
        back = approx_exp(spec.generators, word, -t, y)
        np.testing.assert_allclose(back, x, atol=1e-9)

    @pytest.mark.parametrize(
        "name,word,x",
        [
            ("cierre", (1, 2), [0.3, 0.2, 0.1]),
            ("cr-sphere", (1, 2), [1.0, 0.2, 0.1, -0.3]),
            ("siegel-degenerate", (1, 2), [0.3, 0.2, 0.0]),
            ("cr-sphere", (1, 1, 2), [1.0, 0.2, 0.1, -0.3]),
            ("cr-sphere", (2, 1, 2), [1.0, 0.2, 0.1, -0.3]),
            ("siegel-degenerate", (1, 1, 2), [0.3, 0.2, 0.0]),
        ],
    )
    def test_first_order_slope(self, name, word, x):
        spec = builtin(name)
        x = np.array(x)
        Y = spec.bracket(word)(x)
        ts = np.geomspace(1e-6, 1e-2, 9)
        errs = [np.linalg.norm(approx_exp(spec.generators, word, t, x) - x - t * Y) for t in ts]
        assert log_slope(ts, errs) >= 1 + 1 / len(word) - 0.1

    def test_first_order_slope_cierre_length_three(self):
        # the t^(4/3) regime starts below t ~ 1e-3 at this point
        spec = builtin("cierre")
        x = np.array([0.3, 0.2, 0.1])
        Y = spec.bracket((1, 1, 2))(x)
        ts = np.geomspace(1e-6, 1e-3, 9)
        errs = [np.linalg.norm(approx_exp(spec.generators, (1, 1, 2), t, x) - x - t * Y) for t in ts]
        assert log_slope(ts, errs) >= 1 + 1 / 3 - 0.1

    @pytest.mark.parametrize("name", ["grushin", "heisenberg"])
    def test_nilpotent_step_two_is_exact(self, name):
        spec = builtin(name)
        x = spec.base_point + 0.3
        Y = spec.bracket((1, 2))(x)
        for t in np.geomspace(1e-4, 1e-1, 5):
            assert np.linalg.norm(approx_exp(spec.generators, (1, 2), t, x) - x - t * Y) <= 1e-14


class TestHomogeneousNorm:
    def test_examples(self):
        assert homogeneous_norm(np.zeros(3), [1, 1, 2]) == 0.0
        assert homogeneous_norm([0.0, 0.0, 0.04], [1, 1, 2]) == pytest.approx(0.2)
        assert homogeneous_norm(HVector(np.array([0.0, -0.008]), (1, 3))) == pytest.approx(0.2)

    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.floats(0.01, 10))
    def test_homogeneity(self, h, lam):
        deg = [1, 1, 2, 2, 2, 2]
        h = np.array(h)
        scaled = h * lam ** np.array(deg)
        assert homogeneous_norm(scaled, deg) == pytest.approx(lam * homogeneous_norm(h, deg), rel=1e-9, abs=1e-300)

    def test_hvector_validation(self):
        with pytest.raises(DimensionMismatch):
            HVector(np.zeros(3), (1, 2))


class TestEMap:
    def test_zero(self):
        F = builtin("cierre").frame()
        x = np.array([0.1, 0.2, 0.3])
        np.testing.assert_array_equal(e_map(F, x, np.zeros(F.q)), x)

    def test_single_generator(self):
        X = builtin("cierre").generators[0]
        F = enumerate_frame([X], 1)
        x = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(e_map(F, x, [0.7]), flow(X, x, 0.7), atol=1e-13)

    def test_grushin_bracket_coordinate(self):
        F = builtin("grushin").frame()
        k = F.index((1, 2))
        for t in (1e-3, 1e-2, 0.1):
            h = np.zeros(F.q)
            h[k] = t
            y = e_map(F, [0.0, 0.0], h)
            assert np.linalg.norm(y - [0.0, t]) <= 10 * t**1.5

    def test_composition_order(self):
        # the last block acts first: E(h) = C_1(h_1) ( C_2(h_2) x )
        spec = builtin("heisenberg")
        F = spec.frame()
        g = spec.generators
        x = np.zeros(3)
        h = np.zeros(F.q)
        h[0], h[1] = 0.3, 0.5
        expected = flow(g[0], flow(g[1], x, 0.5), 0.3)
        other = flow(g[1], flow(g[0], x, 0.3), 0.5)
        np.testing.assert_allclose(e_map(F, x, h), expected, atol=1e-14)
        assert abs(expected[2] - other[2]) > 0.1

    def test_negative_bracket_coordinate_inverts(self):
        F = builtin("cierre").frame()
        k = F.index((1, 2))
        x = np.array([0.3, -0.2, 0.1])
        h = np.zeros(F.q)
        h[k] = 0.05
        y = e_map(F, x, h)
        np.testing.assert_allclose(e_map(F, y, -h), x, atol=1e-10)

    def test_batched_matches_single(self):
        F = builtin("cr-sphere").frame(2)
        x = builtin("cr-sphere").base_point
        H = np.random.default_rng(2).normal(scale=0.1, size=(5, F.q))
        Y = EMap(F).evaluate(x, H)
        for b in range(5):
            np.testing.assert_allclose(Y[b], e_map(F, x, H[b]), atol=1e-9)

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatch):
            e_map(builtin("grushin").frame(), [0.0, 0.0], np.zeros(3))


class TestEJacobian:
    @pytest.mark.parametrize("name", BUILTIN_NAMES)
    @pytest.mark.parametrize("method", ["tangent", "fd"])
    def test_columns_at_zero_are_frame(self, name, method):
        spec = builtin(name)
        F = spec.frame()
        x = spec.base_point + 0.1 * np.arange(1, spec.dim + 1)
        J = e_jacobian(F, x, np.zeros(F.q), method=method)
        np.testing.assert_allclose(J, F.values(x), atol=1e-5)

    def test_abelian_frame(self):
        F = enumerate_frame([VectorField.coordinate(2, 0), VectorField.coordinate(2, 1)], 2)
        h = np.array([0.3, -0.2, 0.1, 0.05, -0.1, 0.2])
        J = e_jacobian(F, [0.5, 0.5], h)
        np.testing.assert_array_equal(J[:, :2], np.eye(2))
        np.testing.assert_array_equal(J[:, 2:], 0.0)

    def test_grushin_origin(self):
        F = builtin("grushin").frame()
        J = e_jacobian(F, [0.0, 0.0], np.zeros(F.q))
        expected = np.zeros((2, 6))
        expected[0, 0] = 1.0  # Y1 = dx
        expected[1, 3] = 1.0  # Y4 = [X1, X2] = dy
        expected[1, 4] = -1.0  # Y5 = [X2, X1]
        np.testing.assert_allclose(J, expected, atol=1e-12)

    @given(st.sampled_from(["cierre", "cr-sphere", "heisenberg"]), st.integers(0, 1000))
    def test_tangent_matches_finite_differences(self, name, seed):
        spec = builtin(name)
        F = spec.frame(2)
        h = np.random.default_rng(seed).uniform(-0.2, 0.2, F.q)
        x = spec.base_point + 0.1
        Jt = e_jacobian(F, x, h, method="tangent")
        Jf = e_jacobian(F, x, h, method="fd")
        np.testing.assert_allclose(Jt, Jf, atol=1e-5)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            e_jacobian(builtin("grushin").frame(), [0.0, 0.0], np.zeros(6), method="magic")

    @pytest.mark.parametrize("name", ["grushin", "heisenberg", "cierre"])
    def test_perturbation_decay(self, name):
        # after removing components along higher-degree columns, column k of dE
        # differs from Y_k(E(h)) by at most C |h| on a shrinking grid
        spec = builtin(name)
        F = spec.frame()
        deg = np.array(F.degrees)
        x = spec.base_point + 0.3
        d = np.random.default_rng(0).normal(size=F.q)
        ratios = []
        for lam in (0.4, 0.2, 0.1, 0.05, 0.025):
            h = d * lam**deg
            J = e_jacobian(F, x, h)
            T = F.values(e_map(F, x, h))
            worst = 0.0
            for k in range(F.q):
                r = J[:, k] - T[:, k]
                hi = np.flatnonzero(deg > deg[k])
                if hi.size:
                    a, *_ = np.linalg.lstsq(T[:, hi], r, rcond=None)
                    r = r - T[:, hi] @ a
                worst = max(worst, np.linalg.norm(r))
            ratios.append((worst - 1e-12) / homogeneous_norm(h, F.degrees))
        assert max(ratios[1:]) <= 1.5 * max(ratios[0], 1e-12)
