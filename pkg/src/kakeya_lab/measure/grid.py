"""Occupancy grids on [-L, L]^d and rasterization of tube families."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from ..phase_analysis import is_translation_invariant, trace_curve
from ..phase_expr import PhaseFunction, PhasePoint, deriv_tensor

# prefer the OpenMP/workqueue layers; old TBB builds only emit a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "OccupancyGrid", "TubeFamily", "rasterize_tubes", "straight_family", "segment_family",
    "phase_curve_family", "compression_family", "straight_lattice_family", "y_lattice",
]


@dataclass
class OccupancyGrid:
    """Cell data on the cube [-L, L]^d split into n cells per axis.

    ``data`` is boolean for occupancy or float for scalar fields; axis order
    follows the coordinates.
    """

    L: float
    n: int
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != (self.n,) * self.data.ndim:
            raise ValueError(f"grid data has shape {self.data.shape}, expected n={self.n} per axis")
        if self.data.dtype != bool and not np.all(np.isfinite(self.data)):
            raise ValueError("scalar grids must hold finite values")

    @classmethod
    def empty(cls, L: float, n: int, d: int, dtype=bool) -> "OccupancyGrid":
        return cls(L, n, np.zeros((n,) * d, dtype=dtype))

    @classmethod
    def from_function(cls, L: float, n: int, d: int, fn: Callable) -> "OccupancyGrid":
        """Evaluate ``fn`` on the (..., d) array of cell centers."""
        return cls(L, n, np.asarray(fn(cls.empty(L, n, d).centers())))

    @classmethod
    def from_points(cls, points, L: float, n: int) -> "OccupancyGrid":
        """Mark every cell containing at least one point (points outside are dropped)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = points.shape[1]
        idx = np.floor((points + L) / (2 * L) * n).astype(np.int64)
        idx = idx[np.all((idx >= 0) & (idx < n), axis=1)]
        grid = cls.empty(L, n, d)
        grid.data[tuple(idx.T)] = True
        return grid

    @property
    def d(self) -> int:
        return self.data.ndim

    @property
    def cell(self) -> float:
        return 2 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.cell ** self.d

    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.n) + 0.5) * self.cell

    def centers(self) -> np.ndarray:
        ax = self.axis()
        return np.stack(np.meshgrid(*[ax] * self.d, indexing="ij"), axis=-1)

    def index_of(self, points) -> np.ndarray:
        """Nearest cell index, clipped to the grid."""
        idx = np.floor((np.asarray(points, dtype=float) + self.L) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.n - 1)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def occupied_indices(self) -> np.ndarray:
        return np.flatnonzero(self.data.ravel())

    def to_json(self, path) -> None:
        payload = {"L": self.L, "n": self.n, "d": self.d}
        if self.data.dtype == bool:
            payload["occupied"] = self.occupied_indices().tolist()
        else:
            payload["values"] = self.data.ravel().tolist()
        payload.update({k: v for k, v in self.meta.items() if k not in payload})
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path) -> "OccupancyGrid":
        payload = json.loads(Path(path).read_text())
        L, n, d = float(payload["L"]), int(payload["n"]), int(payload.get("d", 2))
        if "values" in payload:
            data = np.asarray(payload["values"], dtype=float).reshape((n,) * d)
        else:
            data = np.zeros(n ** d, dtype=bool)
            data[np.asarray(payload["occupied"], dtype=np.int64)] = True
            data = data.reshape((n,) * d)
        meta = {k: v for k, v in payload.items() if k not in ("L", "n", "d", "values", "occupied")}
        return cls(L, n, data, meta)

    def to_csv(self, path) -> None:
        """One row per occupied (or nonzero) cell: indices, center coordinates, value."""
        d = self.d
        flat = np.flatnonzero(self.data.ravel())
        idx = np.stack(np.unravel_index(flat, self.data.shape), axis=1)
        ctr = -self.L + (idx + 0.5) * self.cell
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{k + 1}" for k in range(d)] + [f"x{k + 1}" for k in range(d)] + ["value"])
            vals = self.data.ravel()[flat]
            for i, c, v in zip(idx, ctr, vals):
                w.writerow(list(map(int, i)) + [repr(float(a)) for a in c] + [repr(float(v))])


# ------------------------------------------------------------------ tube families


@dataclass
class TubeFamily:
    """Polylines with a common tube radius ``delta``."""

    polylines: list
    delta: float
    provenance: str = "straight"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("tube radius must be positive")
        self.polylines = [np.atleast_2d(np.asarray(p, dtype=float)) for p in self.polylines]

    def __len__(self) -> int:
        return len(self.polylines)

    def segments(self) -> np.ndarray:
        """(S, 2, d) array of consecutive vertex pairs; one-vertex polylines give points."""
        parts = []
        for p in self.polylines:
            if len(p) == 1:
                parts.append(np.stack([p, p], axis=1))
            else:
                parts.append(np.stack([p[:-1], p[1:]], axis=1))
        if not parts:
            return np.zeros((0, 2, 0))
        return np.concatenate(parts)

    def points(self) -> np.ndarray:
        return np.concatenate(self.polylines) if self.polylines else np.zeros((0, 0))


def straight_family(centers, directions, delta: float, length: float = 1.0) -> TubeFamily:
    """Segments of the given length centered at ``centers`` along unit ``directions``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    half = 0.5 * length * dirs
    return TubeFamily([np.stack([c - h, c + h]) for c, h in zip(centers, np.broadcast_to(half, centers.shape))],
                      delta, "straight")


def segment_family(a, b, delta: float) -> TubeFamily:
    return TubeFamily([np.stack([np.asarray(a, float), np.asarray(b, float)])], delta, "segment")


def y_lattice(n: int, half_width: float, k: int = 2) -> np.ndarray:
    line = np.linspace(-half_width, half_width, n)
    return np.stack(np.meshgrid(*[line] * k, indexing="ij"), -1).reshape(-1, k)


def phase_curve_family(phi: PhaseFunction, ys, omegas, t_values, delta: float,
                       provenance: str = "phase curves") -> TubeFamily:
    """Kakeya curves of ``phi`` through (omega(y), 0) for each y, as polylines in (x, t).

    Translation-invariant phases are evaluated in one batch through
    x(t) = omega + grad_y psi(0; y) - grad_y psi(t; y); others are traced
    curve by curve.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    t_values = np.asarray(t_values, dtype=float)
    k = phi.d - 1
    if is_translation_invariant(phi):
        nt = len(t_values)
        tt = np.broadcast_to(t_values[None, :], (len(ys), nt))
        yy = np.broadcast_to(ys[:, None, :], (len(ys), nt, k))
        grad_t = deriv_tensor(phi, ("y",), PhasePoint(np.zeros(k), tt, yy))
        grad_0 = deriv_tensor(phi, ("y",), PhasePoint(np.zeros(k), np.zeros(len(ys)), ys))
        xs = omegas[:, None, :] + grad_0[:, None, :] - grad_t
        lines = [np.column_stack([x, t_values]) for x in xs]
        return TubeFamily(lines, delta, provenance)
    lines = []
    for y, w in zip(ys, omegas):
        tr = trace_curve(phi, y, PhasePoint(w, 0.0, y), t_values)
        if not tr.complete:
            raise RuntimeError(f"curve tracing failed for y={y.tolist()}: {tr.message}")
        lines.append(tr.points)
    return TubeFamily(lines, delta, provenance)


BOURGAIN_SOURCE = "x1*y1 + x2*y2 + t*y1*y2 + (t^2/2)*y1^2"
STRAIGHT_SOURCE = "x1*y1 + x2*y2 + t*(y1^2 + y2^2)/2"


def compression_family(delta: float, n_y: int = 64, epsilon0: float = 0.25,
                       n_t: int = 17) -> TubeFamily:
    """Curves of the compressing example with omega(y) = (0, -y2).

    Every curve lies on the surface x1 = t x2.
    """
    phi = PhaseFunction.from_source(BOURGAIN_SOURCE, 3, epsilon0)
    ys = y_lattice(n_y, epsilon0 / np.sqrt(2))
    omegas = np.column_stack([np.zeros(len(ys)), -ys[:, 1]])
    return phase_curve_family(phi, ys, omegas, np.linspace(-epsilon0, epsilon0, n_t), delta,
                              "compression: omega(y) = (0, -y2)")


def straight_lattice_family(delta: float, seed: int, n_y: int = 64, epsilon0: float = 0.25,
                            n_t: int = 2) -> TubeFamily:
    """Lines x = omega - t y over the same y-lattice, omega uniform in the y-cube."""
    phi = PhaseFunction.from_source(STRAIGHT_SOURCE, 3, epsilon0)
    a = epsilon0 / np.sqrt(2)
    ys = y_lattice(n_y, a)
    omegas = np.random.default_rng(seed).uniform(-a, a, ys.shape)
    return phase_curve_family(phi, ys, omegas, np.linspace(-epsilon0, epsilon0, n_t), delta,
                              f"straight: seeded omega (seed={seed})")


# ------------------------------------------------------------------ rasterization


@numba.njit(cache=True, inline="always")
def _seg_dist2(px, py, pz, ax, ay, az, dx, dy, dz, len2):
    s = 0.0
    if len2 > 0.0:
        s = ((px - ax) * dx + (py - ay) * dy + (pz - az) * dz) / len2
        s = min(1.0, max(0.0, s))
    ex = px - ax - s * dx
    ey = py - ay - s * dy
    ez = pz - az - s * dz
    return ex * ex + ey * ey + ez * ez


@numba.njit(cache=True)
def _span(lo_v, hi_v, reach, L, cell, n):
    lo = max(0, int(np.floor((lo_v - reach + L) / cell - 0.5)))
    hi = min(n - 1, int(np.ceil((hi_v + reach + L) / cell - 0.5)))
    return lo, hi


@numba.njit(cache=True, parallel=True)
def _raster3(grid, segs, delta, L, corner):
    """Mark cells of a 3-d grid within ``delta`` of any segment.

    Concurrent writes only ever store True, so the result does not depend on
    scheduling. A 2-d grid is handled as a single slab with z = 0.
    """
    n = grid.shape[0]
    nz = grid.shape[2]
    cell = 2.0 * L / n
    half = 0.5 * cell
    reach = delta + (half * np.sqrt(3.0 if nz > 1 else 2.0) if corner else 0.0)
    r2 = delta * delta
    for s in numba.prange(segs.shape[0]):
        ax, ay, az = segs[s, 0, 0], segs[s, 0, 1], segs[s, 0, 2]
        dx, dy, dz = segs[s, 1, 0] - ax, segs[s, 1, 1] - ay, segs[s, 1, 2] - az
        len2 = dx * dx + dy * dy + dz * dz
        i0, i1 = _span(min(ax, ax + dx), max(ax, ax + dx), reach, L, cell, n)
        j0, j1 = _span(min(ay, ay + dy), max(ay, ay + dy), reach, L, cell, n)
        k0, k1 = 0, 0
        if nz > 1:
            k0, k1 = _span(min(az, az + dz), max(az, az + dz), reach, L, cell, n)
        for i in range(i0, i1 + 1):
            px = -L + (i + 0.5) * cell
            for j in range(j0, j1 + 1):
                py = -L + (j + 0.5) * cell
                for k in range(k0, k1 + 1):
                    if grid[i, j, k]:
                        continue
                    pz = -L + (k + 0.5) * cell if nz > 1 else 0.0
                    if not corner:
                        if _seg_dist2(px, py, pz, ax, ay, az, dx, dy, dz, len2) < r2:
                            grid[i, j, k] = True
                        continue
                    for c in range(8 if nz > 1 else 4):
                        qx = px + (half if c & 1 else -half)
                        qy = py + (half if c & 2 else -half)
                        qz = pz + ((half if c & 4 else -half) if nz > 1 else 0.0)
                        if _seg_dist2(qx, qy, qz, ax, ay, az, dx, dy, dz, len2) < r2:
                            grid[i, j, k] = True
                            break
    return grid


def _split_segments(segs: np.ndarray, max_len: float) -> np.ndarray:
    """Cut segments into equal pieces no longer than ``max_len``."""
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    pieces = np.maximum(1, np.ceil(lengths / max_len).astype(np.int64))
    if np.all(pieces == 1):
        return segs
    rep = np.repeat(np.arange(len(segs)), pieces)
    offs = np.arange(pieces.sum()) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    frac0 = (offs / pieces[rep])[:, None]
    frac1 = ((offs + 1) / pieces[rep])[:, None]
    a, b = segs[rep, 0], segs[rep, 1]
    return np.stack([a + frac0 * (b - a), a + frac1 * (b - a)], axis=1)


def rasterize_tubes(family: TubeFamily, L: float, n: int, d: Optional[int] = None,
                    mode: str = "center") -> OccupancyGrid:
    """Cells whose center (``mode="center"``) or any corner (``mode="corner"``)
    lies within ``delta`` of a polyline of the family."""
    if mode not in ("center", "corner"):
        raise ValueError(f"unknown rasterization mode {mode!r}")
    segs = family.segments()
    if d is None:
        if not len(segs):
            raise ValueError("dimension is required for an empty family")
        d = segs.shape[2]
    grid = OccupancyGrid.empty(L, n, d)
    grid.meta = {"delta": family.delta, "provenance": family.provenance, "mode": mode,
                 "n_tubes": len(family)}
    if grid.cell > family.delta:
        warnings.warn(f"cell size {grid.cell:.3g} exceeds tube radius {family.delta:.3g}")
        grid.meta["coarse_warning"] = True
    if not len(segs):
        return grid
    if np.any(np.abs(segs) > L):
        raise ValueError("tube family leaves the grid box")
    if d not in (2, 3):
        raise ValueError("rasterization supports d = 2 and d = 3")
    segs = _split_segments(segs, max(2 * family.delta, 4 * grid.cell))
    segs3 = np.zeros(segs.shape[:2] + (3,))
    segs3[..., :d] = segs
    data = np.zeros((n, n, n if d == 3 else 1), dtype=np.bool_)
    _raster3(data, segs3, float(family.delta), float(L), mode == "corner")
    grid.data = data.reshape((n,) * d)
    return grid
