import numpy as np
import pytest

from gxlab import exprlang, gcore
from gxlab.errors import ConfigError, DimensionMismatch
from gxlab.gcore import (
    GBsdeProblem,
    GeneratorSpec,
    UncertaintySet,
    g_value,
    g_value_array,
    twoG,
    validate_assumptions,
)

GAM = UncertaintySet.interval(0.25, 1.0)


class TestGValue:
    def test_positive_argument(self):
        assert g_value(GAM, 2.0) == 1.0

    def test_zero(self):
        assert g_value(GAM, 0.0) == 0.0

    def test_negative_argument(self):
        assert g_value(GAM, -2.0) == -0.25

    def test_corner_family(self):
        fam = UncertaintySet.matrix_family(
            [np.diag([a, b]) for a in (0.25, 1.0) for b in (0.25, 1.0)], 0.25)
        assert g_value(fam, np.diag([1.0, -1.0])) == 0.375

    def test_twoG(self):
        assert twoG(GAM, 0.5) == 0.5
        assert twoG(GAM, -1.0) == -0.25
        assert twoG(GAM, 0.0) == 0.0

    def test_dimension_mismatch(self):
        fam = UncertaintySet.matrix_family([np.eye(2)], 0.5)
        with pytest.raises(DimensionMismatch):
            g_value(fam, np.eye(3))
        with pytest.raises(DimensionMismatch):
            g_value(fam, np.array([[1.0, 2.0], [0.0, 1.0]]))  # not symmetric

    def test_interval_rejects_vectors(self):
        with pytest.raises(DimensionMismatch):
            g_value(GAM, np.array([1.0, 2.0]))


class TestAxioms:
    """Sampled laws of the support function; exact up to rounding."""

    def setup_method(self):
        self.rng = np.random.default_rng(11)
        self.a = self.rng.uniform(-5, 5, 1000)
        self.b = self.rng.uniform(-5, 5, 1000)

    def test_monotonicity(self):
        hi, lo = np.maximum(self.a, self.b), np.minimum(self.a, self.b)
        assert (g_value_array(GAM, hi) - g_value_array(GAM, lo)).min() >= -1e-12

    def test_subadditivity(self):
        lhs = g_value_array(GAM, self.a + self.b)
        assert (g_value_array(GAM, self.a) + g_value_array(GAM, self.b) - lhs).min() >= -1e-12

    def test_positive_homogeneity(self):
        for lam in (0.0, 0.5, 2.0, 7.0):
            diff = np.abs(g_value_array(GAM, lam * self.a) - lam * g_value_array(GAM, self.a))
            assert diff.max() <= 1e-12

    def test_nondegeneracy_lower_bound(self):
        # minimal slope of G is sigma2_min / 2 (G is half the support function)
        hi, lo = np.maximum(self.a, self.b), np.minimum(self.a, self.b)
        gap = (g_value_array(GAM, hi) - g_value_array(GAM, lo)
               - 0.5 * GAM.sigma2_min * (hi - lo))
        assert gap.min() >= -1e-12

    def test_loewner_monotonicity_family(self):
        fam = UncertaintySet.matrix_family(
            [np.diag([a, b]) for a in (0.25, 1.0) for b in (0.25, 1.0)], 0.25)
        for _ in range(200):
            m = self.rng.uniform(-2, 2, (2, 2))
            B = 0.5 * (m + m.T)
            v = self.rng.uniform(-1, 1, 2)
            A = B + np.outer(v, v)
            assert g_value(fam, A) >= g_value(fam, B) - 1e-12

    def test_interval_matches_two_point_family(self):
        fam = UncertaintySet.matrix_family([[[0.25]], [[1.0]]], 0.25)
        for alpha in self.a[:200]:
            assert g_value(fam, np.array([[alpha]])) == g_value(GAM, float(alpha))


class TestUncertaintySet:
    def test_degenerate_rejected(self):
        with pytest.raises(ConfigError) as err:
            UncertaintySet.interval(0.0, 1.0)
        assert "non-degeneracy" in str(err.value)

    def test_inverted_rejected(self):
        with pytest.raises(ConfigError):
            UncertaintySet.interval(2.0, 1.0)

    def test_family_needs_psd_floor(self):
        with pytest.raises(ConfigError):
            UncertaintySet("matrix_family", 0.5, 1.0, 2,
                           ((tuple((0.1, 0.0)), tuple((0.0, 1.0))),))

    def test_family_needs_symmetry(self):
        with pytest.raises(ConfigError):
            UncertaintySet("matrix_family", 0.1, 1.0, 2,
                           (((1.0, 0.5), (0.0, 1.0)),))

    def test_sigma_max(self):
        assert GAM.sigma_max == 1.0
        assert UncertaintySet.interval(0.49, 0.49).is_degenerate_interval


class TestSpecs:
    def test_generator_symmetry_enforced(self):
        e1, e2 = exprlang.parse("z"), exprlang.parse("y")
        with pytest.raises(ConfigError):
            gcore.GeneratorSpec(exprlang.parse("0"), ((e1, e1), (e2, e1)))

    def test_generator_variable_whitelist(self):
        with pytest.raises(ConfigError):
            GeneratorSpec.make("x + z", "0")

    def test_forward_variable_whitelist(self):
        with pytest.raises(ConfigError):
            gcore.ForwardSpec.make(b="y")

    def test_problem_requires_positive_horizon(self):
        with pytest.raises(ConfigError):
            GBsdeProblem.make(T=0.0)

    def test_json_round_trip(self):
        cfg = {
            "gamma": {"kind": "interval", "sigma2_min": 0.25, "sigma2_max": 1.0},
            "forward": {"b": "0.1", "h": "0", "sigma": "1"},
            "generator": {"f": "abs(z)", "g": "0.5*abs(z)"},
            "terminal": "max(x,0)",
            "T": 1.0,
        }
        p = gcore.problem_from_json(cfg)
        assert p.horizon == 1.0
        assert p.gamma == GAM
        assert exprlang.evaluate(p.generator.f, {"t": 0, "y": 0, "z": -2.0}) == 2.0

    def test_json_missing_horizon(self):
        with pytest.raises(ConfigError) as err:
            gcore.problem_from_json({"terminal": "x"})
        assert err.value.path == "T"

    def test_json_bad_expression_names_path(self):
        cfg = {"generator": {"f": "2**"}, "terminal": "x", "T": 1.0}
        with pytest.raises(ConfigError) as err:
            gcore.problem_from_json(cfg)
        assert "generator.f" in str(err.value)

    def test_canonical_json_invariance(self):
        a = gcore.canonical_json({"b": 1, "a": [1, 2]})
        b = gcore.canonical_json({"a": [1, 2], "b": 1})
        assert a == b


class TestValidateAssumptions:
    def test_nonzero_at_z0_fails_with_witness(self):
        p = GBsdeProblem.make(f="y + z", g="0.5*z")
        rep = validate_assumptions(p, flags=("zero_at_z0",))
        check = rep["zero_at_z0"]
        assert not check.passed
        assert check.witness is not None and check.witness[0] == "f"

    def test_vanishing_generators_pass(self):
        p = GBsdeProblem.make(f="z", g="abs(z)")
        assert validate_assumptions(p, flags=("zero_at_z0",)).all_passed

    def test_time_continuity(self):
        p = GBsdeProblem.make(f="sin(t)*z", g="0")
        assert validate_assumptions(p, flags=("time_continuity",)).all_passed

    def test_mean_time_continuity(self):
        p = GBsdeProblem.make(f="sin(t) + z", g="0")
        assert validate_assumptions(p, flags=("mean_time_continuity",)).all_passed

    def test_lipschitz_flag(self):
        p = GBsdeProblem.make(f="abs(z)", g="0")
        rep = validate_assumptions(p, flags=("lipschitz",))
        assert rep.all_passed

    def test_full_report(self):
        p = GBsdeProblem.make(f="z", g="abs(z)")
        rep = validate_assumptions(p)
        assert rep.all_passed and len(rep.checks) == 4
