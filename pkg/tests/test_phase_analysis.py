import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kakeya_lab.phase_analysis import (
    DegeneratePhaseError, bourgain_residual, check_bourgain, check_h1, check_h2,
    check_straight_condition, check_translation_invariant, g0, is_translation_invariant,
    point_at, sample_points, trace_curve, tube_contains,
)
from kakeya_lab.phase_expr import PhaseFunction, PhasePoint, deriv_tensor

BOURGAIN = "x1*y1 + x2*y2 + t*y1*y2 + (t^2/2)*y1^2"
STRAIGHT = "x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2"
EXP = "x1*y1 + x2*y2 + (exp(t) - 1)*(y1^2 + y2^2)/2"
# translation-invariant or straight phases used for the implication check
CORPUS = {
    "straight": (STRAIGHT, 3),
    "tilted": ("x1*y1 + x2*y2 + t*(y1^2 + 3*y1*y2 + 2*y2^2)/2 + t*y1", 3),
    "exp": (EXP, 3),
    "bourgain": (BOURGAIN, 3),
    "planar": ("x1*y1 + t*y1^2/2 + t^2*y1^3", 2),
    "nonti": ("x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2 + x1*t*y1^2", 3),
    "d4": ("x1*y1 + x2*y2 + x3*y3 + t*(y1^2 + y2^2 - y3^2)/2", 4),
}


def phase(src, d=3, eps=0.25):
    return PhaseFunction.from_source(src, d, eps)


def test_g0_straight_phase_closed_form():
    y = np.array([0.2, -0.1])
    g = g0(phase(STRAIGHT), PhasePoint([0.05, 0.1], 0.07, y))
    np.testing.assert_allclose(g, [-0.2, 0.1, 1.0], atol=1e-15)


def test_g0_bourgain_against_cross_product_oracle():
    phi = phase(BOURGAIN)
    rng = np.random.default_rng(0)
    for _ in range(20):
        pt = PhasePoint(rng.uniform(-0.1, 0.1, 2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2, 2))
        m = deriv_tensor(phi, ("X", "y"), pt)
        oracle = np.cross(m[:, 0], m[:, 1])
        g = g0(phi, pt)
        np.testing.assert_allclose(g, oracle / oracle[-1], atol=1e-14)
        y1, y2 = pt.y
        np.testing.assert_allclose(g, [-(y2 + 2 * pt.t * y1), -y1, 1], atol=1e-14)


def test_g0_translation_invariant_x_components():
    phi = phase(EXP)
    pt = PhasePoint([0.01, 0.02], 0.15, [0.1, -0.2])
    g = g0(phi, pt)
    grad_psi_t = deriv_tensor(phi, ("t", "y"), pt)[0]
    np.testing.assert_allclose(g[:2], -grad_psi_t, atol=1e-15)


def test_g0_orthogonal_to_columns_d4():
    phi = phase(CORPUS["d4"][0], 4)
    pts = sample_points(phi, 3, seed=1)
    m = deriv_tensor(phi, ("X", "y"), pts)
    g = g0(phi, pts)
    assert np.max(np.abs(np.einsum("ni,nij->nj", g, m))) < 1e-14


def test_g0_unit_normalization_when_t_component_small():
    phi = phase("x1*y1 + t*y2 + x2*y2", 3)  # columns (1,0,0), (0,1,1) -> G ~ (0,-1,1)
    assert g0(phi, PhasePoint([0, 0], 0, [0, 0]))[-1] == 1
    phi = phase("x1*y1 + t*y2", 3)  # columns (1,0,0), (0,0,1) -> G ~ (0,-1,0)
    g = g0(phi, PhasePoint([0, 0], 0, [0, 0]))
    np.testing.assert_allclose(np.abs(g), [0, 1, 0])


def test_g0_degenerate():
    with pytest.raises(DegeneratePhaseError):
        g0(phase("0"), PhasePoint([0, 0], 0, [0, 0]))


def test_h1():
    for src in (STRAIGHT, BOURGAIN, EXP):
        phi = phase(src)
        rep = check_h1(phi, sample_points(phi))
        assert rep.passed and np.all(rep.values >= 0.5)
    rep = check_h1(phase("0"), sample_points(phase("0")))
    assert not rep.passed and rep.max_residual == 1


def test_h2_examples():
    phi = phase(STRAIGHT)
    x_samples = sample_points(phi, 3, y=[0.0, 0.0])
    rep = check_h2(phi, [0.0, 0.0], x_samples)
    assert rep.passed
    np.testing.assert_allclose(rep.values, 1.0, atol=1e-15)
    deg = phase("x1*y1 + x2*y2 + t*y1^2")
    assert not check_h2(deg, [0.0, 0.0], x_samples).passed
    assert np.all(check_h2(deg, [0.0, 0.0], x_samples).values == 0)


def test_h2_flag_ignores_scaling_of_raw_g():
    phi = phase(BOURGAIN)
    pts = sample_points(phi, 3, y=[0.1, 0.05])
    raw = g0(phi, pts, normalize=False)
    np.testing.assert_allclose(g0(phi, pts), raw / raw[:, -1:], atol=1e-15)
    doubled = phase("2*x1*y1 + 2*x2*y2 + 2*t*y1*y2 + t^2*y1^2")  # raw G scales by 4
    np.testing.assert_allclose(g0(doubled, pts), g0(phi, pts), atol=1e-14)


def test_bourgain_residual_examples():
    zero = bourgain_residual(phase(STRAIGHT), PhasePoint([0.1, 0], 0.1, [0.1, 0.2]))
    assert zero.residual == 0
    res = bourgain_residual(phase(BOURGAIN), PhasePoint([0.0, 0.0], 0.1, [0.0, 0.0]))
    np.testing.assert_allclose(res.m1, [[0.2, 1], [1, 0]], atol=1e-15)
    np.testing.assert_allclose(res.m2, [[2, 0], [0, 0]], atol=1e-15)
    assert res.C == pytest.approx(0.4 / 2.04, rel=1e-12)
    assert res.residual == pytest.approx(np.sqrt(1 - 0.4 ** 2 / (4 * 2.04)), rel=1e-12)
    assert res.residual == pytest.approx(0.990, abs=5e-4)
    ex = bourgain_residual(phase(EXP), PhasePoint([0.0, 0.0], 0.13, [0.1, 0.0]))
    assert ex.C == pytest.approx(1, abs=1e-12) and ex.residual < 1e-12


def test_bourgain_undefined_constant():
    # M1 = 0 but M2 != 0 at t = 0 for psi = t^2 |y|^2 / 2
    phi = phase("x1*y1 + x2*y2 + t^2*(y1^2 + y2^2)/2")
    res = bourgain_residual(phi, PhasePoint([0.0, 0.0], 0.0, [0.0, 0.0]))
    assert res.residual == 1 and np.isnan(res.C) and not res.defined


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 1000))
def test_scale_invariance_of_residual(s, seed):
    phi = phase(BOURGAIN)
    rng = np.random.default_rng(seed)
    pt = PhasePoint(rng.uniform(-0.1, 0.1, 2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2, 2))
    base = bourgain_residual(phi, pt)
    scaled = bourgain_residual(phi, pt, scale=s)
    assert scaled.residual == pytest.approx(base.residual, rel=1e-9, abs=1e-12)
    assert scaled.C == pytest.approx(s * base.C, rel=1e-9)


@pytest.mark.parametrize("src", [STRAIGHT, EXP, BOURGAIN, CORPUS["tilted"][0]])
def test_frozen_and_field_modes_agree_on_translation_invariant(src):
    phi = phase(src)
    pts = sample_points(phi, 3)
    a = bourgain_residual(phi, pts, "frozen")
    b = bourgain_residual(phi, pts, "field")
    np.testing.assert_allclose(a.residual, b.residual, atol=1e-6)


def test_field_mode_differs_when_g_varies_in_x():
    phi = phase(CORPUS["nonti"][0])
    pt = PhasePoint([0.1, 0.05], 0.1, [0.15, -0.1])
    a = bourgain_residual(phi, pt, "frozen")
    b = bourgain_residual(phi, pt, "field")
    assert np.isfinite(a.residual) and np.isfinite(b.residual)
    with pytest.raises(ValueError):
        bourgain_residual(phi, pt, "other")


def test_translation_invariance_examples():
    phi = phase(BOURGAIN)
    assert check_translation_invariant(phi, sample_points(phi)).passed
    assert is_translation_invariant(phi)
    bad = phase("x1*y1 + x2*y2 + x1^2*y1")
    assert not check_translation_invariant(bad, sample_points(bad)).passed
    offset = phase("x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2 + 1")
    rep = check_translation_invariant(offset, sample_points(offset))
    assert not rep.passed and rep.max_residual == pytest.approx(1)


def test_straight_condition_examples():
    y = [0.1, -0.15]
    for src in (STRAIGHT, CORPUS["tilted"][0]):
        phi = phase(src)
        assert check_straight_condition(phi, sample_points(phi, y=y)).passed
    phi = phase(BOURGAIN)
    rep = check_straight_condition(phi, sample_points(phi, y=y))
    assert not rep.passed
    one = check_straight_condition(phi, point_at(sample_points(phi, y=y), 0).__class__(
        np.zeros((1, 2)), np.zeros(1), np.array([y])))
    assert one.max_residual == 0 and "insufficient samples" in one.notes


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_straight_implies_bourgain(name):
    src, d = CORPUS[name]
    phi = phase(src, d)
    all_pts = sample_points(phi, 3)
    ys = np.unique(all_pts.y, axis=0)
    # straightness has to hold on a neighbourhood of y, not at isolated y
    slices = [sample_points(phi, 3, y=y) for y in ys]
    if all(check_straight_condition(phi, pts).passed for pts in slices):
        assert check_bourgain(phi, all_pts).max_residual < 1e-8
    else:
        assert name in ("bourgain", "exp", "nonti", "planar")


def test_bourgain_report_fails_for_bourgain_example():
    phi = phase(BOURGAIN)
    rep = check_bourgain(phi, sample_points(phi))
    assert not rep.passed and rep.max_residual > 0.5
    assert rep.to_dict()["witness"] is not None


def test_trace_curve_straight_line():
    phi = phase(STRAIGHT)
    ts = np.linspace(-0.2, 0.2, 9)
    for method in ("auto", "newton"):
        tr = trace_curve(phi, [1.0, 0.0], PhasePoint([0.0, 0.0], 0.0, [1.0, 0.0]), ts, method)
        assert tr.complete
        np.testing.assert_allclose(tr.x, np.c_[-ts, 0 * ts], atol=1e-14)
    assert tr.points[4].tolist() == [0, 0, 0]


@pytest.mark.parametrize("method", ["auto", "newton"])
def test_trace_curve_bourgain_identity(method):
    phi = phase(BOURGAIN)
    ts = np.linspace(-0.2, 0.2, 21)
    rng = np.random.default_rng(3)
    for y in rng.uniform(-0.2, 0.2, (10, 2)):
        base = PhasePoint([0.0, -y[1]], 0.0, y)
        tr = trace_curve(phi, y, base, ts, method)
        assert tr.complete
        np.testing.assert_allclose(tr.x[:, 0], tr.t * tr.x[:, 1], atol=1e-10)
        v0 = deriv_tensor(phi, ("y",), base)
        v = deriv_tensor(phi, ("y",), PhasePoint(tr.x, tr.t, y))
        assert np.max(np.linalg.norm(v - v0, axis=1)) < 1e-10


def test_trace_curve_general_phase_consistency():
    phi = phase(CORPUS["nonti"][0])
    assert not is_translation_invariant(phi)
    y = np.array([0.1, 0.2])
    base = PhasePoint([0.05, -0.02], 0.0, y)
    tr = trace_curve(phi, y, base, np.linspace(-0.2, 0.2, 17))
    assert tr.complete and tr.method == "newton"
    v0 = deriv_tensor(phi, ("y",), base)
    v = deriv_tensor(phi, ("y",), PhasePoint(tr.x, tr.t, y))
    assert np.max(np.linalg.norm(v - v0, axis=1)) < 1e-10


def test_trace_curve_aborts_on_singular_block():
    # d/dx grad_y phi = 1 - t vanishes at t = 1
    phi = phase("x1*y1 - t*x1*y1", 2)
    tr = trace_curve(phi, [0.1], PhasePoint([0.0], 0.0, [0.1]), np.linspace(0, 1.5, 16))
    assert not tr.complete and "singular" in tr.message
    assert tr.t.max() < 1.0 and len(tr.t) >= 9


def test_tube_contains():
    phi = phase(STRAIGHT)
    y = np.array([0.3, -0.2])
    base = PhasePoint([0.05, 0.0], 0.0, y)
    assert tube_contains(phi, y, base, 0.01, [0.05, 0.0, 0.0])
    rng = np.random.default_rng(4)
    q = rng.uniform(-0.2, 0.2, (500, 3))
    curve_x = base.x - q[:, 2:3] * y
    expected = np.linalg.norm(q[:, :2] - curve_x, axis=1) < 0.05
    np.testing.assert_array_equal(tube_contains(phi, y, base, 0.05, q), expected)
    assert not tube_contains(phi, y, base, 0.0, q).any()


def test_sample_points_shapes_and_seed():
    phi = phase(BOURGAIN)
    pts = sample_points(phi)
    assert pts.batch_shape == (5 ** 5,)
    assert np.max(np.linalg.norm(pts.x, axis=1)) <= 0.8 * 0.25 + 1e-15
    assert np.max(np.abs(pts.t)) <= 0.2 + 1e-15
    a, b = sample_points(phi, seed=3), sample_points(phi, seed=3)
    np.testing.assert_array_equal(a.x, b.x)
    assert not np.array_equal(a.x, pts.x)
    assert np.max(np.linalg.norm(a.y, axis=1)) <= 0.2 + 1e-15
