import numpy as np
import pytest
import yaml

from cclift.errors import SpecFileError, UnknownSystem
from cclift.systems import BUILTIN_NAMES, builtin, load_spec, load_spec_file, quasi_random_points, resolve_system

GRUSHIN_DOC = {
    "spec_version": 1,
    "name": "grushin-file",
    "dimension": 2,
    "s": 2,
    "generators": [
        {"name": "X1", "components": [[[1.0, [0, 0]]], []]},
        {"name": "X2", "components": [[], [[1.0, [1, 0]]]]},
    ],
    "relations": [{"word": [1, 1, 2]}, {"word": "2.12", "equals": [], "tol": 1e-12}],
}


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_relations(name):
    spec = builtin(name)
    checks = spec.check_relations()
    assert checks and all(ok for _, _, ok in checks.values())
    assert spec.frame().dim == spec.dim


def test_registry_contents():
    assert set(BUILTIN_NAMES) == {"siegel-degenerate", "cr-sphere", "cierre", "xy-blowup", "grushin", "heisenberg"}
    assert builtin("cr-sphere").orbit_rank == 3
    assert not builtin("xy-blowup").complete


def test_unknown():
    with pytest.raises(UnknownSystem):
        builtin("nope")
    with pytest.raises(UnknownSystem):
        resolve_system("nope")


def test_grushin_structure():
    spec = builtin("grushin")
    P = quasi_random_points(2, 50)
    np.testing.assert_allclose(spec.bracket((1, 2)).eval_batch(P), np.tile([0.0, 1.0], (50, 1)), atol=1e-14)


def test_quasi_random_reproducible():
    a = quasi_random_points(3, 20, -1, 1, seed=4)
    np.testing.assert_array_equal(a, quasi_random_points(3, 20, -1, 1, seed=4))
    assert np.all((a >= -1) & (a <= 1))
    assert not np.array_equal(a, quasi_random_points(3, 20, -1, 1, seed=5))


class TestSpecFiles:
    def test_polynomial_doc(self):
        spec = load_spec(GRUSHIN_DOC)
        spec.self_test()
        ref = builtin("grushin")
        P = quasi_random_points(2, 30)
        for w in [(1,), (2,), (1, 2)]:
            np.testing.assert_allclose(spec.bracket(w).eval_batch(P), ref.bracket(w).eval_batch(P), atol=1e-14)

    def test_failing_relation_detected(self):
        doc = dict(GRUSHIN_DOC, relations=[{"word": [1, 2], "equals": [[1.0, [1]]]}])
        spec = load_spec(doc)
        with pytest.raises(AssertionError):
            spec.self_test()

    def test_catalog_doc(self, tmp_path):
        doc = {"spec_version": 1, "dimension": 3, "s": 3, "generators": [{"catalog": "cierre:X1"}, {"catalog": "cierre:X2"}]}
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(doc))
        spec = resolve_system(str(p))
        ref = builtin("cierre")
        P = quasi_random_points(3, 20)
        np.testing.assert_allclose(spec.bracket((1, 1, 2)).eval_batch(P), ref.bracket((1, 1, 2)).eval_batch(P), atol=1e-12)

    def test_optional_fields(self):
        doc = dict(GRUSHIN_DOC, epsilon=0.5, delta=0.2, base_point=[1.0, 0.0], ballbox_s=2)
        spec = load_spec(doc)
        assert spec.epsilon == 0.5 and spec.delta == 0.2 and spec.ballbox_s == 2
        np.testing.assert_array_equal(spec.base_point, [1.0, 0.0])

    @pytest.mark.parametrize(
        "patch",
        [
            {"spec_version": 2},
            {"dimension": "two"},
            {"generators": []},
            {"generators": [{"components": [[]]}]},
            {"generators": [{"catalog": "missing:X1"}]},
            {"generators": [{"catalog": "cierre:X1"}]},
            {"relations": [{"word": [1, 5]}]},
            {"relations": [{"equals": []}]},
        ],
    )
    def test_invalid_docs(self, patch):
        with pytest.raises(SpecFileError):
            load_spec(dict(GRUSHIN_DOC, **patch))

    def test_not_a_mapping(self, tmp_path):
        p = tmp_path / "x.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(SpecFileError):
            load_spec_file(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(SpecFileError):
            load_spec_file(tmp_path / "missing.yaml")
        p = tmp_path / "bad.yaml"
        p.write_text("a: [1, 2\n")
        with pytest.raises(SpecFileError):
            load_spec_file(p)
