"""Discretized Kakeya, Nikodym and curved maximal functions.

A tube of radius delta around a unit segment (a stadium in the plane, a
capsule in space) is integrated against a scalar grid by summing the values
of the cells weighted by the fraction of each cell inside the tube. Sums for every translate are
computed at once as an FFT correlation with the tube's cell mask.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from ..phase_expr import PhaseFunction, PhasePoint, deriv_tensor
from ..space_forms import Geodesic, Kind, SpaceForm, distance
from ..straighten_geo import KLEIN_GUARD, ChartMap, chart_for
from .boxcount import fit_slope
from .grid import OccupancyGrid

__all__ = [
    "MaximalScanResult", "ScalingFit", "direction_net", "tube_mask", "tube_sums",
    "kakeya_maximal", "nikodym_maximal", "curved_maximal", "lp_scaling_fit", "omega_lattice",
]

TIE_RTOL = 1e-9


@dataclass
class MaximalScanResult:
    """Per-parameter maximal values with the maximizing witness.

    ``integrals`` are the raw tube integrals before division by
    delta^(d-1).
    """

    kind: str
    delta: float
    params: np.ndarray
    values: np.ndarray
    witnesses: np.ndarray
    integrals: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def sup(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0

    @property
    def sup_index(self) -> int:
        return _first_max(self.values)

    def lp_norm(self, q: float) -> float:
        """(mean over the net of value^q)^(1/q)."""
        return float(np.mean(self.values ** q) ** (1.0 / q))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta": self.delta, "params": self.params.tolist(),
                "values": self.values.tolist(), "witnesses": self.witnesses.tolist(),
                "sup": self.sup, "sup_index": self.sup_index, **self.meta}

    def to_csv(self, path) -> None:
        p = self.params.reshape(len(self.values), -1)
        w = self.witnesses.reshape(len(self.values), -1)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([f"param{i + 1}" for i in range(p.shape[1])] + ["value"]
                         + [f"witness{i + 1}" for i in range(w.shape[1])])
            for pr, v, wr in zip(p, self.values, w):
                out.writerow([repr(float(a)) for a in pr] + [repr(float(v))]
                             + [repr(float(a)) for a in wr])


def _first_max(values) -> int:
    """Index of the first entry within a relative 1e-9 of the maximum."""
    values = np.asarray(values)
    if not values.size:
        return -1
    top = values.max()
    return int(np.flatnonzero(values >= top - TIE_RTOL * max(1.0, abs(top)))[0])


# ------------------------------------------------------------------ nets


def direction_net(d: int, spacing: float) -> np.ndarray:
    """Unit directions modulo sign with neighbour spacing at most ``spacing``.

    Uniform angles in [0, pi) for d = 2; a Fibonacci spiral on the upper
    hemisphere for d = 3.
    """
    if d == 2:
        m = int(np.ceil(np.pi / spacing))
        ang = np.arange(m) * np.pi / m
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if d == 3:
        # a Fibonacci point set of N points on the sphere has spacing about sqrt(4 pi / N)
        m = int(np.ceil(2 * np.pi / spacing ** 2 * 1.5))
        k = np.arange(m) + 0.5
        z = k / m
        r = np.sqrt(1 - z * z)
        ang = np.pi * (1 + np.sqrt(5)) * k
        return np.column_stack([r * np.cos(ang), r * np.sin(ang), z])
    raise ValueError("direction nets are provided for d = 2 and d = 3")


def omega_lattice(radius: float, spacing: float, k: int) -> np.ndarray:
    """Points of the cubic lattice with the given spacing inside the closed k-ball."""
    m = int(np.floor(radius / spacing))
    line = np.arange(-m, m + 1) * spacing
    pts = np.stack(np.meshgrid(*[line] * k, indexing="ij"), -1).reshape(-1, k)
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]


# ------------------------------------------------------------------ Euclidean tubes


def tube_mask(direction, delta: float, cell: float, length: float = 1.0,
              sub: Optional[int] = None) -> np.ndarray:
    """Fraction of each cell (centered offset array) within ``delta`` of the
    segment {s * direction : |s| <= length / 2}.

    Fractions come from ``sub``^d midpoint subsamples per cell (default 4 in
    the plane, 2 in space); ``sub=1`` is plain center membership.
    """
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    d = len(u)
    if sub is None:
        sub = 4 if d == 2 else 2
    r = int(np.ceil((0.5 * length + delta) / cell))
    ax = (np.arange(-r * sub, (r + 1) * sub) + 0.5) * cell / sub - 0.5 * cell
    pts = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1)
    s = np.clip(pts @ u, -0.5 * length, 0.5 * length)
    inside = np.sum((pts - s[..., None] * u) ** 2, axis=-1) < delta * delta
    m = 2 * r + 1
    inside = inside.reshape(sum(((m, sub) for _ in range(d)), ()))
    return inside.mean(axis=tuple(range(1, 2 * d, 2)))


def tube_sums(f: OccupancyGrid, direction, delta: float, length: float = 1.0) -> np.ndarray:
    """Integral of f over the tube centered at every cell center."""
    mask = tube_mask(direction, delta, f.cell, length)
    out = fftconvolve(np.asarray(f.data, dtype=float), mask, mode="same") * f.cell_volume
    # FFT rounding leaves tiny negatives where the exact sum is zero
    scale = max(1.0, float(np.abs(f.data).max(initial=0.0))) * mask.sum() * f.cell_volume
    out[np.abs(out) < 1e-12 * scale] = 0.0
    return np.maximum(out, 0.0)


def _check_delta(f: OccupancyGrid, delta: float) -> None:
    if delta < 2 * f.cell:
        raise ValueError(f"delta={delta} is below two cell widths ({2 * f.cell:.3g})")
    if np.any(np.asarray(f.data, dtype=float) < 0):
        raise ValueError("maximal functions take a nonnegative f")


def kakeya_maximal(f: OccupancyGrid, delta: float, directions=None,
                   stride: Optional[int] = None) -> MaximalScanResult:
    """K_delta f(omega) = sup_x delta^(1-d) * integral of f over the tube T_omega(x).

    The supremum runs over cell centers taken every ``stride`` cells (default
    about delta / 2); ties go to the lexicographically smallest x.
    """
    _check_delta(f, delta)
    d = f.d
    dirs = direction_net(d, delta) if directions is None else np.atleast_2d(directions)
    step = max(1, int(np.floor(delta / 2 / f.cell))) if stride is None else int(stride)
    ax = f.axis()[::step]
    sl = (slice(None, None, step),) * d
    norm = delta ** (d - 1)
    vals, wits, ints = [], [], []
    for u in dirs:
        sums = tube_sums(f, u, delta)[sl]
        k = _first_max(sums.ravel())
        idx = np.unravel_index(k, sums.shape)
        ints.append(sums.ravel()[k])
        vals.append(sums.ravel()[k] / norm)
        wits.append([ax[i] for i in idx])
    return MaximalScanResult("kakeya", delta, np.asarray(dirs), np.array(vals), np.array(wits),
                             np.array(ints), {"stride": step})


def nikodym_maximal(f: OccupancyGrid, delta: float, positions, directions=None,
                    model: str = "euclidean") -> MaximalScanResult:
    """N_delta f(x) = sup_omega delta^(1-d) * integral over the tube through x.

    ``model="euclidean"`` uses unit segments centered at x. For ``"sphere"``
    or ``"hyperbolic"`` the grid lives in the straightening chart of that
    model: the tube is the Riemannian delta-neighbourhood of the unit
    geodesic segment centered at the point with chart coordinates x whose
    chart image has direction omega, and cells are weighted by the
    Riemannian volume density.
    """
    _check_delta(f, delta)
    d = f.d
    dirs = direction_net(d, delta) if directions is None else np.atleast_2d(directions)
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    norm = delta ** (d - 1)
    ints = np.zeros((len(pos), len(dirs)))
    if model == "euclidean":
        idx = f.index_of(pos)
        for j, u in enumerate(dirs):
            sums = tube_sums(f, u, delta)
            ints[:, j] = sums[tuple(idx.T)]
    else:
        space = SpaceForm(Kind(model), d)
        chart = chart_for(space)
        centers = f.centers().reshape(-1, d)
        inside = _chart_domain(chart, centers)
        weight = np.zeros(len(centers))
        weight[inside] = (np.asarray(f.data, dtype=float).ravel()[inside]
                          * chart.volume_density(centers[inside]) * f.cell_volume)
        live = weight > 0
        ambient = chart.inverse(centers[live])
        for i, x in enumerate(pos):
            for j, u in enumerate(dirs):
                ints[i, j] = _geodesic_tube_integral(space, chart, x, u, delta, ambient, weight[live])
    best = np.array([_first_max(row) for row in ints])
    vals = ints[np.arange(len(pos)), best] / norm
    return MaximalScanResult("nikodym", delta, pos, vals, dirs[best],
                             ints[np.arange(len(pos)), best], {"model": model})


def _chart_domain(chart: ChartMap, u) -> np.ndarray:
    """Cells the chart can pull back; the Klein ball is cut at its inverse guard."""
    if chart.space.kind is Kind.HYPERBOLIC:
        return np.linalg.norm(u, axis=-1) <= KLEIN_GUARD
    return np.ones(len(u), dtype=bool)


def _closest_parameter(space: SpaceForm, p, u, q) -> np.ndarray:
    """Arclength of the point of the geodesic p + s u (|s| unrestricted) nearest to q."""
    a = space.inner(q, p)
    b = space.inner(q, u)
    if space.kind is Kind.SPHERE:
        return np.arctan2(b, a)
    if space.kind is Kind.HYPERBOLIC:
        return np.arctanh(np.clip(b / -a, -1 + 1e-15, 1 - 1e-15))
    return b - space.inner(p, u)


def _geodesic_tube_integral(space, chart: ChartMap, x, direction, delta, ambient, weight,
                            length: float = 1.0) -> float:
    p = chart.inverse(x)
    v = chart.inverse_jacobian(x) @ np.asarray(direction, dtype=float)
    geo = Geodesic.through(space, p, v)
    s = np.clip(_closest_parameter(space, geo.base, geo.direction, ambient), -length / 2, length / 2)
    dist = distance(space, ambient, geo(s))
    return float(np.sum(weight[dist < delta]))


# ------------------------------------------------------------------ curved


def curved_maximal(phi: PhaseFunction, f: OccupancyGrid, delta: float, ys,
                   omegas=None) -> MaximalScanResult:
    """sup over omega of delta^(1-d) * integral of f over the curved tube
    {X : |grad_y phi(X; y) - grad_y phi((omega, 0); y)| < delta}.

    ``omegas`` defaults to the lattice of spacing delta in the
    epsilon0-ball. The grid coordinates are (x, t).
    """
    if f.d != phi.d:
        raise ValueError("grid dimension must match the phase dimension")
    _check_delta(f, delta)
    d = phi.d
    k = d - 1
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    oms = omega_lattice(phi.epsilon0, delta, k) if omegas is None else np.atleast_2d(omegas)
    centers = f.centers().reshape(-1, d)
    weight = np.asarray(f.data, dtype=float).ravel() * f.cell_volume
    live = weight > 0
    pts, w = centers[live], weight[live]
    norm = delta ** (d - 1)
    vals, wits, ints = [], [], []
    for y in ys:
        grad = deriv_tensor(phi, ("y",), PhasePoint(pts[:, :k], pts[:, k], y))
        base = deriv_tensor(phi, ("y",), PhasePoint(oms, np.zeros(len(oms)), y))
        row = np.array([np.sum(w[np.sum((grad - b) ** 2, axis=1) < delta * delta]) for b in base])
        j = _first_max(row)
        ints.append(row[j])
        vals.append(row[j] / norm)
        wits.append(oms[j])
    return MaximalScanResult("curved", delta, ys, np.array(vals), np.array(wits), np.array(ints),
                             {"n_omega": len(oms)})


# ------------------------------------------------------------------ scaling


@dataclass(frozen=True)
class ScalingFit:
    deltas: np.ndarray
    norms: np.ndarray
    q: float
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return {"delta": self.deltas.tolist(), "norms": self.norms.tolist(), "q": self.q,
                "slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def lp_scaling_fit(results: Sequence[MaximalScanResult], q: float) -> ScalingFit:
    """Slope of log ||scan||_q against log delta."""
    if len(results) < 3:
        raise ValueError("scaling fits need at least three values of delta")
    deltas = np.array([r.delta for r in results])
    norms = np.array([r.lp_norm(q) for r in results])
    if np.any(norms <= 0):
        raise ValueError("a scan has zero norm; the log-log fit is undefined")
    slope, intercept, r2 = fit_slope(np.log(deltas), np.log(norms))
    return ScalingFit(deltas, norms, float(q), slope, intercept, r2)
