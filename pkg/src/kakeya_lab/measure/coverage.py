"""Nikodym coverage: which base points see a unit geodesic mostly inside a set."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..space_forms import Geodesic, Kind, SpaceForm
from ..straighten_geo import chart_for
from .grid import OccupancyGrid

__all__ = ["CoverageReport", "nikodym_coverage", "axis_lines", "direction_lines",
           "geodesic_lines", "N_SAMPLES"]

N_SAMPLES = 256

# a family maps a base point x (d,) to an array (m, N_SAMPLES, d) of sample points
Family = Callable[[np.ndarray], np.ndarray]


def _arclengths(length: float = 1.0) -> np.ndarray:
    return ((np.arange(N_SAMPLES) + 0.5) / N_SAMPLES - 0.5) * length


def axis_lines(x) -> np.ndarray:
    """Unit segments centered at x parallel to each coordinate axis."""
    x = np.asarray(x, dtype=float)
    s = _arclengths()
    eye = np.eye(len(x))
    return x + s[None, :, None] * eye[:, None, :]


def direction_lines(directions) -> Family:
    """Unit segments centered at x along each of the given directions."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    s = _arclengths()

    def family(x):
        return np.asarray(x, dtype=float) + s[None, :, None] * dirs[:, None, :]
    return family


def geodesic_lines(model: str, directions) -> Family:
    """Chart images of unit geodesic segments of a space form.

    Grid coordinates are chart coordinates; the geodesic through the point
    with coordinates x leaves it with chart direction omega and is sampled
    uniformly in Riemannian arclength.
    """
    d = np.atleast_2d(directions).shape[1]
    space = SpaceForm(Kind(model), d)
    chart = chart_for(space)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    s = _arclengths()

    def family(x):
        x = np.asarray(x, dtype=float)
        p = chart.inverse(x)
        jac = chart.inverse_jacobian(x)
        out = []
        for w in dirs:
            geo = Geodesic.through(space, p, jac @ w)
            out.append(chart.forward(geo(s)))
        return np.stack(out)
    return family


@dataclass(frozen=True)
class CoverageReport:
    base_points: np.ndarray
    fractions: np.ndarray  # best occupied fraction per base point
    covered: np.ndarray
    lam: float

    @property
    def covered_fraction(self) -> float:
        return float(np.mean(self.covered)) if self.covered.size else 0.0

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "n_points": int(len(self.base_points)),
                "n_covered": int(np.count_nonzero(self.covered)),
                "covered_fraction": self.covered_fraction,
                "base_points": self.base_points.tolist(),
                "fractions": self.fractions.tolist(), "covered": self.covered.tolist()}


def nikodym_coverage(omega: OccupancyGrid, base_points, family: Family = axis_lines,
                     lam: float = 0.5) -> CoverageReport:
    """Mark x covered when some segment of ``family(x)`` has at least a
    ``lam`` fraction of its samples in occupied cells.

    Samples outside the grid box count as unoccupied.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    pts = np.atleast_2d(np.asarray(base_points, dtype=float))
    occ = np.asarray(omega.data, dtype=bool)
    fractions = np.zeros(len(pts))
    for i, x in enumerate(pts):
        samples = family(x)
        inside = np.all(np.abs(samples) < omega.L, axis=-1)
        hit = np.zeros(samples.shape[:-1], dtype=bool)
        idx = omega.index_of(samples[inside])
        hit[inside] = occ[tuple(idx.T)]
        fractions[i] = hit.mean(axis=-1).max()
    covered = fractions >= lam
    return CoverageReport(pts, fractions, covered, float(lam))
