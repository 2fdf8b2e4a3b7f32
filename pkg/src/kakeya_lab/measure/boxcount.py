"""Dyadic box counting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import OccupancyGrid

__all__ = ["BoxCountReport", "box_count", "fit_slope"]


@dataclass(frozen=True)
class BoxCountReport:
    """Counts N_k of occupied boxes of side 2L / 2^k, and the fitted slope of
    log2 N_k against k."""

    L: float
    ks: np.ndarray
    counts: np.ndarray
    slope: float
    intercept: float
    r2: float

    @property
    def scales(self) -> np.ndarray:
        return 2 * self.L / 2.0 ** self.ks

    def to_dict(self) -> dict:
        return {"L": self.L, "k": self.ks.tolist(), "scales": self.scales.tolist(),
                "counts": self.counts.tolist(), "slope": self.slope,
                "intercept": self.intercept, "r2": self.r2}


def fit_slope(x, y) -> tuple[float, float, float]:
    """Least-squares line y = slope * x + intercept and its R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def _grid_counts(grid: OccupancyGrid, ks) -> dict:
    n = grid.n
    top = int(np.log2(n))
    if 2 ** top != n:
        raise ValueError("box counting on a grid needs a power-of-two resolution")
    if max(ks) > top:
        raise ValueError(f"k={max(ks)} is finer than the grid (n={n})")
    counts = {}
    cur = grid.data.astype(bool)
    d = grid.d
    for k in range(top, min(ks) - 1, -1):
        if k in ks:
            counts[k] = int(np.count_nonzero(cur))
        if k > min(ks):
            m = cur.shape[0] // 2
            cur = cur.reshape(sum(((m, 2) for _ in range(d)), ())).any(axis=tuple(range(1, 2 * d, 2)))
    return counts


def _cloud_counts(points: np.ndarray, L: float, ks) -> dict:
    d = points.shape[1]
    unit = (points + L) / (2 * L)
    counts = {}
    for k in ks:
        idx = np.clip(np.floor(unit * 2 ** k).astype(np.int64), 0, 2 ** k - 1)
        key = np.zeros(len(idx), dtype=np.int64)
        for j in range(d):
            key = key * 2 ** k + idx[:, j]
        counts[k] = int(len(np.unique(key)))
    return counts


def box_count(source, ks, L: float = None) -> BoxCountReport:
    """Box counts over the dyadic levels ``ks`` for a grid or an (N, d) point cloud.

    Point clouds need the half-width ``L`` of the bounding cube; points
    outside it are ignored.
    """
    ks = sorted(int(k) for k in ks)
    if len(ks) < 3:
        raise ValueError("box counting needs at least three scales")
    if isinstance(source, OccupancyGrid):
        L = source.L
        counts = _grid_counts(source, ks)
    else:
        if L is None:
            raise ValueError("point clouds need the box half-width L")
        pts = np.asarray(source, dtype=float)
        pts = pts[np.all(np.abs(pts) <= L, axis=1)]
        counts = _cloud_counts(pts, L, ks)
    ks_arr = np.array(ks)
    n_k = np.array([counts[k] for k in ks])
    if np.any(n_k == 0):
        raise ValueError("empty set: nothing to count")
    slope, intercept, r2 = fit_slope(ks_arr, np.log2(n_k))
    return BoxCountReport(float(L), ks_arr, n_k, slope, intercept, r2)
