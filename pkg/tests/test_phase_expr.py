import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kakeya_lab.phase_expr import (
    Const, DomainError, ParseError, PhaseFunction, PhasePoint, Var, deriv_tensor,
    differentiate, evaluate, load_phase_spec, parse_phase, to_str,
)

BOURGAIN = "x1*y1 + x2*y2 + t*y1*y2 + (t^2/2)*y1^2"
CORPUS = [
    (BOURGAIN, 3),
    ("x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2", 3),
    ("x1*y1 + x2*y2 + (exp(t) - 1)*(y1^2 + y2^2)/2", 3),
    ("x1*y1 + t*y1^2/2 + x1^2*t*y1^3 - 3/7*x1*t^3", 2),
    ("x1*y1 + x2*y2 + x3*y3 + t*(y1^2 - y2^2 + y3^2)/2 + t^2*y1*y3", 4),
]


def test_parse_bourgain_example():
    e = parse_phase(BOURGAIN, 3)
    assert to_str(e) == "x1 * y1 + x2 * y2 + t * y1 * y2 + t^2 / 2 * y1^2"


def test_parse_zero_is_constant():
    assert parse_phase("0", 3) == Const(Fraction(0))


def test_variable_index_out_of_range():
    with pytest.raises(ParseError, match="out of range"):
        parse_phase("x1*y3", 3)


@pytest.mark.parametrize("src, pos", [("x1 + * y1", 5), ("x1 + (y1", 8), ("sin x1", 4),
                                      ("x1 $ y1", 3), ("x1^1.5", 3), ("", 0)])
def test_syntax_errors_carry_position(src, pos):
    with pytest.raises(ParseError) as info:
        parse_phase(src, 2)
    assert info.value.position == pos


def test_unknown_identifier():
    with pytest.raises(ParseError, match="unknown identifier"):
        parse_phase("z + t", 2)


def test_precedence():
    env = {"x1": 2.0, "t": 3.0, "y1": 0.5}
    assert evaluate(parse_phase("-x1^2", 2), env) == -4.0
    assert evaluate(parse_phase("x1 - t - y1", 2), env) == pytest.approx(-1.5)
    assert evaluate(parse_phase("x1 / t * y1", 2), env) == pytest.approx(1 / 3)
    assert evaluate(parse_phase("2^-1 * x1", 2), env) == 1.0


def test_rational_literals_stay_exact():
    e = parse_phase("1/3 + 1/6", 2)
    assert e == Const(Fraction(1, 2))
    assert isinstance(e.value, Fraction)


def test_derivative_of_t_squared_half():
    assert to_str(differentiate(parse_phase("t^2/2", 2), "t")) == "t"


def test_derivative_x1_of_bourgain():
    assert differentiate(parse_phase(BOURGAIN, 3), "x1") == Var("y1")


def test_fourth_order_mixed_partial_of_bourgain():
    phi = PhaseFunction.from_source(BOURGAIN, 3)
    e = phi.derivative("t", "t", "y1", "y1")
    assert e == Const(Fraction(2))


def test_eval_bourgain_at_ones():
    e = parse_phase(BOURGAIN, 3)
    assert evaluate(e, dict.fromkeys(["x1", "x2", "t", "y1", "y2"], 1.0)) == 3.5


def test_eval_zero_assignment():
    assert evaluate(parse_phase("x1*y1", 2), {"x1": 0.0, "t": 0.0, "y1": 0.0}) == 0


@pytest.mark.parametrize("src, env", [("log(t)", {"t": 0.0}), ("1/t", {"t": 0.0}),
                                      ("sqrt(t)", {"t": -1.0}), ("t^(-2)", {"t": 0.0}),
                                      ("exp(exp(t))", {"t": 10.0})])
def test_domain_errors(src, env):
    with pytest.raises(DomainError):
        evaluate(parse_phase(src, 2), env)


def test_domain_error_names_subexpression():
    with pytest.raises(DomainError) as info:
        evaluate(parse_phase("t + log(t - 1)", 2), {"t": 0.5})
    assert to_str(info.value.subexpr) == "log(t - 1)"


def test_missing_variable():
    with pytest.raises(KeyError):
        evaluate(parse_phase("x1*y1", 2), {"x1": 1.0})


def test_hessian_of_bourgain_psi():
    phi = PhaseFunction.from_source("t*y1*y2 + (t^2/2)*y1^2", 3)
    pt = PhasePoint([0.0, 0.0], 0.1, [0.0, 0.0])
    np.testing.assert_allclose(deriv_tensor(phi, ("y", "y"), pt),
                               [[0.01, 0.1], [0.1, 0.0]], atol=1e-15)


def test_mixed_block_of_straight_phase():
    phi = PhaseFunction.from_source("x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2", 3)
    pt = PhasePoint([0.05, -0.02], 0.1, [0.3, -0.7])
    np.testing.assert_allclose(deriv_tensor(phi, ("X", "y"), pt),
                               [[1, 0], [0, 1], [0.3, -0.7]], atol=1e-15)


def test_zero_phase_tensor():
    phi = PhaseFunction.from_source("0", 3)
    pt = PhasePoint([0.1, 0.2], 0.1, [0.1, 0.0])
    assert not deriv_tensor(phi, ("X", "y", "y"), pt).any()


def test_order_above_four_rejected():
    phi = PhaseFunction.from_source(BOURGAIN, 3)
    with pytest.raises(ValueError):
        deriv_tensor(phi, ("t", "t", "t", "y", "y"), PhasePoint([0, 0], 0, [0, 0]))
    with pytest.raises(ValueError):
        phi.derivative("t", "t", "t", "y1", "y1")


def test_batched_tensor_matches_pointwise():
    phi = PhaseFunction.from_source(CORPUS[2][0], 3)
    rng = np.random.default_rng(0)
    x, t, y = rng.uniform(-0.2, 0.2, (5, 2)), rng.uniform(-0.2, 0.2, 5), rng.uniform(-0.2, 0.2, (5, 2))
    batched = deriv_tensor(phi, ("t", "y", "y"), PhasePoint(x, t, y))
    assert batched.shape == (5, 1, 2, 2)
    for k in range(5):
        single = deriv_tensor(phi, ("t", "y", "y"), PhasePoint(x[k], t[k], y[k]))
        np.testing.assert_array_equal(batched[k], single)


@pytest.mark.parametrize("src, d", CORPUS)
def test_clairaut_symmetry_exact(src, d):
    phi = PhaseFunction.from_source(src, d)
    names = phi.names
    pt = PhasePoint(np.full(d - 1, 0.07), 0.11, np.linspace(-0.1, 0.13, d - 1))
    env = pt.env()
    rng = np.random.default_rng(1)
    for _ in range(20):
        order = int(rng.integers(2, 5))
        vs = list(rng.choice(names, order))
        perm = list(rng.permutation(vs))
        a = differentiate_chain(phi.expr, vs)
        b = differentiate_chain(phi.expr, perm)
        fa = evaluate(a, dict(zip(names, env)))
        fb = evaluate(b, dict(zip(names, env)))
        assert fa == pytest.approx(fb, rel=1e-13, abs=1e-13)
        # the cache hands back one entry for both orders
        assert phi.derivative(*vs) is phi.derivative(*perm)


def differentiate_chain(e, variables):
    for v in variables:
        e = differentiate(e, v)
    return e


@pytest.mark.parametrize("src, d", CORPUS)
def test_symbolic_first_derivatives_match_central_differences(src, d):
    phi = PhaseFunction.from_source(src, d)
    names = phi.names
    f = phi.evaluator()
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(10):
        p = rng.uniform(-0.8, 0.8, len(names)) * phi.epsilon0
        for k, name in enumerate(names):
            up, dn = p.copy(), p.copy()
            up[k] += h
            dn[k] -= h
            fd = (f(list(up)) - f(list(dn))) / (2 * h)
            exact = phi.evaluator(name)(list(p))
            assert abs(fd - exact) <= 1e-7 * max(1.0, abs(exact))


# ------------------------------------------------------------------ roundtrip


def _exprs(d=3):
    names = ["x1", "x2", "t", "y1", "y2"][: 2 * d - 1]
    leaves = st.one_of(
        st.sampled_from(names),
        st.integers(0, 9).map(str),
        st.tuples(st.integers(1, 9), st.integers(2, 9)).map(lambda p: f"{p[0]}/{p[1]}"),
        st.floats(0.001, 100, allow_nan=False).map(repr),
    )

    def extend(children):
        return st.one_of(
            st.tuples(children, st.sampled_from("+-*/"), children).map(
                lambda p: f"({p[0]} {p[1]} {p[2]})"),
            children.map(lambda c: f"-{c}"),
            st.tuples(children, st.integers(-3, 4)).map(lambda p: f"({p[0]})^({p[1]})"),
            st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt"]), children).map(
                lambda p: f"{p[0]}({p[1]})"),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(_exprs())
def test_print_parse_roundtrip(src):
    e = parse_phase(src, 3)
    assert parse_phase(to_str(e), 3) == e


@settings(max_examples=150, deadline=None)
@given(_exprs(), st.sampled_from(["x1", "x2", "t", "y1", "y2"]))
def test_derivative_roundtrip(src, var):
    de = differentiate(parse_phase(src, 3), var)
    assert parse_phase(to_str(de), 3) == de


def test_load_phase_spec_defaults(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"d": 3, "phase": "x1*y1 + x2*y2"}')
    phi = load_phase_spec(path)
    assert phi.d == 3 and phi.epsilon0 == 0.25
    with pytest.raises(ValueError):
        load_phase_spec({"d": 3})
    with pytest.raises(ValueError):
        load_phase_spec({"d": 3, "phase": "t", "epsilon0": -1})


def test_phase_function_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        PhaseFunction.from_source("t", 2, epsilon0=0.0)


def test_float_literals_are_binary():
    e = parse_phase("0.1", 2)
    assert isinstance(e.value, float) and e.value == 0.1
    assert math.isclose(evaluate(parse_phase("1e-3*t", 2), {"t": 2.0}), 0.002)
