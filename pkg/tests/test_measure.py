import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kakeya_lab.measure import (
    OccupancyGrid, TubeFamily, axis_lines, box_count, compression_family, curved_maximal,
    direction_lines, direction_net, geodesic_lines, kakeya_maximal, lp_scaling_fit,
    nikodym_coverage, nikodym_maximal, omega_lattice, rasterize_tubes, segment_family,
    straight_family, tube_mask,
)
from kakeya_lab.phase_expr import PhaseFunction


def ones(L, n, d=2):
    return OccupancyGrid.from_function(L, n, d, lambda c: np.ones(c.shape[:-1]))


# ---------------------------------------------------------------- grids


def test_grid_json_roundtrip(tmp_path):
    g = OccupancyGrid.from_points([[0.1, 0.2], [-0.7, 0.9]], 1.0, 16)
    g.to_json(tmp_path / "g.json")
    h = OccupancyGrid.from_json(tmp_path / "g.json")
    assert h.L == 1.0 and h.n == 16 and np.array_equal(g.data, h.data)
    payload = json.loads((tmp_path / "g.json").read_text())
    assert payload["occupied"] == sorted(payload["occupied"])


def test_scalar_grid_rejects_nonfinite():
    with pytest.raises(ValueError):
        OccupancyGrid(1.0, 2, np.array([[0.0, np.nan], [1.0, 1.0]]))


def test_count_bounded():
    g = OccupancyGrid.from_function(1.0, 8, 3, lambda c: np.ones(c.shape[:-1], bool))
    assert g.count == 8 ** 3


# ---------------------------------------------------------------- rasterization


def test_single_tube_area():
    delta = 0.1
    fam = straight_family([[0.0, 0.0]], [[0.6, 0.8]], delta)
    g = rasterize_tubes(fam, 1.0, 256)
    area = g.count * g.cell_volume
    stadium = 2 * delta + np.pi * delta ** 2
    assert abs(area / stadium - 1) < 0.1


def test_tube_volume_converges():
    delta = 0.1
    fam = straight_family([[0.0, 0.0]], [[1.0, 0.3]], delta)
    stadium = 2 * delta + np.pi * delta ** 2
    errs = [abs(rasterize_tubes(fam, 1.0, n).count * (2 / n) ** 2 - stadium) for n in (64, 256)]
    assert errs[1] < errs[0]
    assert errs[1] / stadium < 2 * (2 / 256) / delta


def test_capsule_volume_d3():
    delta = 0.1
    fam = straight_family([[0.0, 0.0, 0.0]], [[1.0, 1.0, 1.0]], delta)
    g = rasterize_tubes(fam, 1.0, 128)
    capsule = np.pi * delta ** 2 + 4 / 3 * np.pi * delta ** 3
    assert abs(g.count * g.cell_volume / capsule - 1) < 0.1


def test_empty_family():
    g = rasterize_tubes(TubeFamily([], 0.1), 1.0, 32, d=2)
    assert g.count == 0


def test_corner_mode_contains_center_mode():
    fam = segment_family([-0.3, 0.1], [0.4, -0.2], 0.05)
    c = rasterize_tubes(fam, 1.0, 128)
    k = rasterize_tubes(fam, 1.0, 128, mode="corner")
    assert np.all(k.data[c.data]) and k.count > c.count


def test_coarse_warning():
    fam = segment_family([0, 0], [0.5, 0], 0.01)
    with pytest.warns(UserWarning):
        g = rasterize_tubes(fam, 1.0, 16)
    assert g.meta["coarse_warning"]


def test_family_outside_box():
    with pytest.raises(ValueError):
        rasterize_tubes(segment_family([0, 0], [2, 0], 0.1), 1.0, 32)


def test_rasterization_matches_bruteforce():
    rng = np.random.default_rng(3)
    fam = TubeFamily([rng.uniform(-0.6, 0.6, (4, 2)) for _ in range(3)], 0.07)
    g = rasterize_tubes(fam, 1.0, 64)
    c = g.centers().reshape(-1, 2)
    best = np.full(len(c), np.inf)
    for a, b in fam.segments():
        v = b - a
        s = np.clip((c - a) @ v / (v @ v), 0, 1)
        best = np.minimum(best, np.linalg.norm(c - (a + s[:, None] * v), axis=1))
    assert np.array_equal(g.data.ravel(), best < 0.07)


def test_compression_cells_near_surface():
    delta = 2 ** -5
    fam = compression_family(delta, n_y=16)
    g = rasterize_tubes(fam, 0.5, 128)
    c = g.centers()[g.data]
    # distance from each occupied center to x1 = t x2, measured along x1
    gap = np.abs(c[:, 0] - c[:, 2] * c[:, 1]) / np.sqrt(1 + c[:, 2] ** 2 + c[:, 1] ** 2)
    assert np.all(gap <= delta + g.cell * np.sqrt(3))
    # every curve of the family lies exactly on the surface
    pts = fam.points()
    assert np.max(np.abs(pts[:, 0] - pts[:, 2] * pts[:, 1])) < 1e-12


def test_rasterization_deterministic():
    fam = compression_family(2 ** -4, n_y=8)
    a = rasterize_tubes(fam, 0.5, 64)
    b = rasterize_tubes(fam, 0.5, 64)
    assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------- box counting


def test_box_count_segment():
    s = np.linspace(0, 1, 200001)
    g = OccupancyGrid.from_points(np.column_stack([s, 0.3 + 0 * s]), 1.0, 1024)
    assert abs(box_count(g, range(4, 11)).slope - 1) < 0.05


def test_box_count_square():
    g = OccupancyGrid.from_function(1.0, 1024, 2, lambda c: np.all((c >= 0) & (c <= 1), axis=-1))
    rep = box_count(g, range(4, 11))
    assert abs(rep.slope - 2) < 0.05
    assert np.all(np.diff(rep.counts) >= 0)


def test_box_count_cloud_matches_grid():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (5000, 2))
    g = OccupancyGrid.from_points(pts, 1.0, 256)
    a = box_count(g, range(2, 9))
    b = box_count(pts, range(2, 9), L=1.0)
    assert np.array_equal(a.counts, b.counts)


def test_box_count_errors():
    g = OccupancyGrid.from_points([[0, 0]], 1.0, 16)
    with pytest.raises(ValueError):
        box_count(g, [1, 2])
    with pytest.raises(ValueError):
        box_count(g, range(2, 6))
    with pytest.raises(ValueError):
        box_count(np.zeros((3, 2)), range(1, 4))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_box_counts_nondecreasing(seed):
    pts = np.random.default_rng(seed).uniform(-1, 1, (200, 3))
    assert np.all(np.diff(box_count(pts, range(0, 7), L=1.0).counts) >= 0)


# ---------------------------------------------------------------- maximal functions


def test_direction_net_spacing():
    net = direction_net(2, 0.1)
    ang = np.arctan2(net[:, 1], net[:, 0])
    assert np.max(np.diff(ang)) <= 0.1 + 1e-12
    net3 = direction_net(3, 0.2)
    assert np.allclose(np.linalg.norm(net3, axis=1), 1)
    probe = np.random.default_rng(1).normal(size=(2000, 3))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    gap = np.arccos(np.clip(np.abs(probe @ net3.T).max(axis=1), -1, 1))
    assert gap.max() <= 0.2


def test_tube_mask_area():
    delta, cell = 0.1, 0.01
    m = tube_mask([0.3, 0.7], delta, cell)
    assert abs(m.sum() * cell ** 2 / (2 * delta + np.pi * delta ** 2) - 1) < 0.01


def test_kakeya_constant():
    delta = 0.1
    r = kakeya_maximal(ones(2.0, 400), delta)
    assert np.all(np.abs(r.values / (2 + np.pi * delta) - 1) < 0.05)


def test_kakeya_zero():
    r = kakeya_maximal(OccupancyGrid.empty(1.0, 64, 2, float), 0.1)
    assert np.all(r.values == 0)
    # ties break to the lexicographically smallest lattice point
    assert np.allclose(r.witnesses, r.witnesses[0]) and np.all(r.witnesses[0] < -0.9)


def test_kakeya_single_tube():
    delta = 0.1
    fam = straight_family([[0.0, 0.0]], [[1.0, 0.0]], delta)
    f = rasterize_tubes(fam, 1.0, 128)
    f = OccupancyGrid(f.L, f.n, f.data.astype(float))
    r = kakeya_maximal(f, delta, [[1.0, 0.0], [0.0, 1.0]])
    assert r.values[0] >= r.values[1]
    assert r.sup_index == 0


def test_kakeya_rejects_fine_delta():
    with pytest.raises(ValueError):
        kakeya_maximal(ones(1.0, 64), 0.02)


def test_nikodym_constant():
    delta = 0.1
    r = nikodym_maximal(ones(2.0, 400), delta, [[0.0, 0.0], [0.3, -0.4]])
    assert np.all(np.abs(r.values / (2 + np.pi * delta) - 1) < 0.05)


def test_nikodym_off_support():
    f = OccupancyGrid.from_function(2.0, 200, 2, lambda c: (c[..., 0] > 1.5).astype(float))
    r = nikodym_maximal(f, 0.1, [[0.0, 0.0]])
    assert r.values[0] == 0


@pytest.mark.parametrize("model", ["sphere", "hyperbolic"])
def test_nikodym_space_form_comparable(model):
    delta = 0.1
    g = ones(1.2, 240)
    pos = [[0.0, 0.0], [0.2, 0.1], [0.0, 0.3], [-0.21, 0.21]]
    net = direction_net(2, 0.3)
    e = nikodym_maximal(g, delta, pos, net)
    m = nikodym_maximal(g, delta, pos, net, model=model)
    assert np.all(np.abs(m.values / e.values - 1) < 0.15)


def test_monotone_in_delta():
    rng = np.random.default_rng(5)
    f = OccupancyGrid(1.0, 128, rng.uniform(0, 1, (128, 128)))
    dirs = direction_net(2, 0.3)
    prev = None
    for delta in (0.04, 0.06, 0.1):
        r = kakeya_maximal(f, delta, dirs, stride=1)
        if prev is not None:
            assert np.all(r.integrals >= prev - 1e-12)
        prev = r.integrals
    pos = [[0.0, 0.0], [0.2, -0.3]]
    a = nikodym_maximal(f, 0.05, pos, dirs).integrals
    b = nikodym_maximal(f, 0.08, pos, dirs).integrals
    assert np.all(b >= a - 1e-12)


def test_curved_straight_phase_matches_kakeya():
    phi = PhaseFunction.from_source("x1*y1 + t*y1^2/2", 2)
    f = OccupancyGrid.from_function(1.0, 400, 2, lambda c: (np.abs(c[..., 1]) <= 0.5).astype(float))
    ys = np.array([[0.0], [0.1], [0.2], [-0.25]])
    delta = 0.05
    c = curved_maximal(phi, f, delta, ys)
    dirs = np.column_stack([-ys[:, 0], np.ones(len(ys))])
    k = kakeya_maximal(f, delta, dirs)
    assert np.all(np.abs(c.values / k.values - 1) < 0.1)


def test_curved_zero():
    phi = PhaseFunction.from_source("x1*y1 + t*y1^2/2", 2)
    c = curved_maximal(phi, OccupancyGrid.empty(1.0, 64, 2, float), 0.1, [[0.0]])
    assert c.values[0] == 0


def test_omega_lattice():
    pts = omega_lattice(0.25, 0.1, 2)
    assert len(pts) == 21 and np.all(np.linalg.norm(pts, axis=1) <= 0.25)


def test_lp_scaling_constant():
    # the stadium caps contribute pi*delta, so the slope is only ~0 for small delta
    f = ones(1.0, 512)
    scans = [kakeya_maximal(f, d, direction_net(2, 0.5)) for d in (1 / 32, 1 / 64, 1 / 128)]
    assert abs(lp_scaling_fit(scans, 2).slope) < 0.05


def test_lp_scaling_ball():
    L, n = 1.0, 512
    scans = []
    for d in (1 / 8, 1 / 16, 1 / 32):
        f = OccupancyGrid.from_function(L, n, 2, lambda c: (np.linalg.norm(c, axis=-1) < d).astype(float))
        scans.append(kakeya_maximal(f, d, direction_net(2, 0.5)))
    assert abs(lp_scaling_fit(scans, 2).slope - 1) < 0.1


def test_lp_scaling_needs_three():
    r = kakeya_maximal(ones(1.0, 64), 0.1, [[1.0, 0.0]])
    with pytest.raises(ValueError):
        lp_scaling_fit([r, r], 2)


def test_scan_csv(tmp_path):
    r = kakeya_maximal(ones(1.0, 64), 0.1, direction_net(2, 0.5))
    r.to_csv(tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "param1,param2,value,witness1,witness2" and len(lines) == len(r.values) + 1


# ---------------------------------------------------------------- coverage


def test_coverage_full_and_empty():
    pts = np.random.default_rng(2).uniform(-0.4, 0.4, (20, 2))
    full = OccupancyGrid.from_function(1.0, 64, 2, lambda c: np.ones(c.shape[:-1], bool))
    assert np.all(nikodym_coverage(full, pts, axis_lines, 0.9).covered)
    empty = OccupancyGrid.empty(1.0, 64, 2)
    assert not np.any(nikodym_coverage(empty, pts, axis_lines, 0.5).covered)


def test_coverage_slab():
    # Omega = {0 <= x1 < 0.5} in [-0.5, 0.5]^2; the x1-axis segment through x
    # meets it in length min(x1 + 0.5, 0.5) - max(x1 - 0.5, 0)
    omega = OccupancyGrid.from_function(0.5, 128, 2, lambda c: c[..., 0] >= 0)
    x1 = np.linspace(-0.45, 0.45, 91)
    x1 = x1[np.abs(x1 + 0.1) > 0.01]
    pts = np.column_stack([x1, np.full_like(x1, 0.1)])
    rep = nikodym_coverage(omega, pts, axis_lines, 0.4)
    expected = np.minimum(x1 + 0.5, 0.5) - np.maximum(x1 - 0.5, 0) >= 0.4
    assert np.array_equal(rep.covered, expected)


def test_coverage_direction_and_geodesic_families():
    omega = OccupancyGrid.from_function(1.0, 128, 2, lambda c: np.abs(c[..., 1]) < 0.05)
    pts = [[0.0, 0.0], [0.0, 0.3]]
    rep = nikodym_coverage(omega, pts, direction_lines(direction_net(2, 0.1)), 0.8)
    assert rep.covered.tolist() == [True, False]
    for model in ("sphere", "hyperbolic"):
        rep = nikodym_coverage(omega, pts, geodesic_lines(model, direction_net(2, 0.1)), 0.8)
        assert rep.covered.tolist() == [True, False]


def test_coverage_lambda_range():
    with pytest.raises(ValueError):
        nikodym_coverage(OccupancyGrid.empty(1.0, 8, 2), [[0, 0]], axis_lines, 1.0)
