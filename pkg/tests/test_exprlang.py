import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gxlab import exprlang
from gxlab.errors import (
    ArityMismatch,
    DomainError,
    ExprSyntaxError,
    MissingBinding,
    UnboundedDetected,
    UnknownIdentifier,
)
from gxlab.exprlang import estimate_lipschitz, evaluate, parse, to_source


class TestParseAndEvaluate:
    def test_abs_scaling(self):
        assert evaluate(parse("10*abs(z)"), {"z": -2.0}) == 20.0

    def test_identity(self):
        ast = parse("z")
        assert ast == exprlang.Var("z")
        assert evaluate(ast, {"z": 3.5}) == 3.5

    def test_malformed_offset(self):
        with pytest.raises(ExprSyntaxError) as err:
            parse("2**")
        assert err.value.offset == 2

    def test_abs(self):
        assert evaluate(parse("abs(z)"), {"z": -1.0}) == 1.0

    def test_sum(self):
        assert evaluate(parse("y + z"), {"y": 0.0, "z": 1.0}) == 1.0

    def test_piecewise(self):
        expr = parse("max(z,0) - 0.25*max(-z,0)")
        assert evaluate(expr, {"z": -2.0}) == -0.5

    def test_precedence(self):
        assert evaluate(parse("1 + 2*3"), {}) == 7.0
        assert evaluate(parse("(1 + 2)*3"), {}) == 9.0
        assert evaluate(parse("2 - 3 - 4"), {}) == -5.0

    def test_unary_minus(self):
        assert evaluate(parse("-z*z"), {"z": 3.0}) == -9.0  # (-z) * z
        assert evaluate(parse("-(z*z)"), {"z": 3.0}) == -9.0
        assert evaluate(parse("1 - -z"), {"z": 2.0}) == 3.0

    def test_scientific_notation(self):
        assert evaluate(parse("1.5e-3 + 2E2"), {}) == pytest.approx(200.0015)

    def test_functions(self):
        assert evaluate(parse("pos(z)"), {"z": -3.0}) == 0.0
        assert evaluate(parse("neg(z)"), {"z": -3.0}) == 3.0
        assert evaluate(parse("min(y, z)"), {"y": 2.0, "z": -1.0}) == -1.0
        assert evaluate(parse("sin(t)"), {"t": 0.5}) == pytest.approx(math.sin(0.5))
        assert evaluate(parse("cos(t)"), {"t": 0.5}) == pytest.approx(math.cos(0.5))

    def test_exp_is_clamped(self):
        big = evaluate(parse("exp(z)"), {"z": 1e6})
        assert math.isfinite(big) and big == math.exp(50.0)
        assert evaluate(parse("exp(z)"), {"z": -1e6}) == math.exp(-50.0)

    def test_empty_source(self):
        with pytest.raises(ExprSyntaxError):
            parse("   ")

    def test_unknown_variable(self):
        with pytest.raises(UnknownIdentifier):
            parse("w + 1")

    def test_unknown_function(self):
        with pytest.raises(UnknownIdentifier):
            parse("tanh(z)")

    def test_arity_mismatch(self):
        with pytest.raises(ArityMismatch):
            parse("min(z)")
        with pytest.raises(ArityMismatch):
            parse("abs(y, z)")

    def test_missing_binding(self):
        with pytest.raises(MissingBinding):
            evaluate(parse("y + z"), {"y": 1.0})

    def test_division_guard(self):
        assert evaluate(parse("1/x"), {"x": 2.0}) == 0.5
        with pytest.raises(DomainError):
            evaluate(parse("1/x"), {"x": 1e-13})
        with pytest.raises(DomainError):
            evaluate(parse("1/x"), {"x": np.array([1.0, 1e-14])})

    def test_trailing_garbage(self):
        with pytest.raises(ExprSyntaxError):
            parse("1 + 2 )")

    def test_vectorized(self):
        z = np.array([-2.0, 0.0, 3.0])
        out = evaluate(parse("abs(z) + 1"), {"z": z})
        np.testing.assert_array_equal(out, [3.0, 1.0, 4.0])


class TestDeterminism:
    def test_bit_identical(self):
        expr = parse("sin(t)*z + exp(y)/max(abs(z), 1)")
        env = {"t": 0.37, "y": -1.2, "z": 2.25}
        first = evaluate(expr, env)
        assert all(evaluate(expr, env) == first for _ in range(5))

    def test_compiled_matches_walk(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            ast = exprlang.random_ast(rng, depth=4)
            env = {v: rng.uniform(-3, 3) for v in exprlang.VARIABLES}
            assert exprlang.compile_expr(ast)(env) == evaluate(ast, env)


class TestRoundTrip:
    def test_thousand_random_asts(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            ast = exprlang.random_ast(rng, depth=4)
            assert parse(to_source(ast)) == ast

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=150, deadline=None)
    def test_roundtrip_property(self, seed):
        ast = exprlang.random_ast(np.random.default_rng(seed), depth=3)
        assert parse(to_source(ast)) == ast


class TestHomogeneityProbe:
    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.floats(min_value=0.0, max_value=8.0),
           st.floats(min_value=-5.0, max_value=5.0))
    @settings(max_examples=150, deadline=None)
    def test_degree_one_in_z(self, seed, lam, z):
        ast = exprlang.random_homogeneous_ast(np.random.default_rng(seed), depth=3)
        lhs = evaluate(ast, {"z": lam * z})
        rhs = lam * evaluate(ast, {"z": z})
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


class TestLipschitz:
    def test_abs_z(self):
        est = estimate_lipschitz(parse("abs(z)"), variables=("z",),
                                 box={"z": (-10, 10)}, n=10_000,
                                 rng=np.random.default_rng(0))
        assert est.method == "sampled"
        assert est.constant == pytest.approx(1.0, rel=0.05)
        assert est.padded == pytest.approx(est.constant * 1.1)

    def test_constant(self):
        est = estimate_lipschitz(parse("3"), n=100, rng=np.random.default_rng(0))
        assert est.constant == 0.0

    def test_quadratic(self):
        est = estimate_lipschitz(parse("z*z"), variables=("z",),
                                 box={"z": (-10, 10)}, n=10_000,
                                 rng=np.random.default_rng(0))
        assert est.constant == pytest.approx(20.0, rel=0.05)

    def test_cap_trips(self):
        with pytest.raises(UnboundedDetected):
            estimate_lipschitz(parse("z*z"), variables=("z",),
                               box={"z": (-10, 10)}, n=4096,
                               rng=np.random.default_rng(0), cap=10.0)

    def test_declared(self):
        est = exprlang.declared_lipschitz(4.0)
        assert est.method == "declared" and est.constant == 4.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            exprlang.LipschitzEstimate(-1.0, "declared", 0)
