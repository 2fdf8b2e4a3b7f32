"""Constant-curvature model spaces in ambient coordinates.

Sphere S^d ⊂ R^{d+1} (curvature +1), the upper sheet of the hyperboloid
H^d ⊂ R^{d,1} (curvature -1), and Euclidean R^d. Points and tangent vectors
are plain numpy arrays of ambient coordinates; every operation accepts a
leading batch axis where that is natural.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Kind", "SpaceForm", "Geodesic", "GeometryError",
    "exp_map", "geodesic_eval", "distance", "parallel_transport",
    "geodesic_submanifold_sample", "integrate_geodesic", "write_point_cloud",
]

POINT_TOL = 1e-12
PROPAGATION_TOL = 1e-10
# distance arguments (cos / cosh of the distance) are clamped only within this slack
CLAMP_SLACK = 1e-9


class GeometryError(ValueError):
    pass


class Kind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SPHERE = "sphere"
    HYPERBOLIC = "hyperbolic"


@dataclass(frozen=True)
class SpaceForm:
    kind: Kind
    d: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.d < 2:
            raise ValueError("dimension must be at least 2")

    @property
    def curvature(self) -> int:
        return {Kind.EUCLIDEAN: 0, Kind.SPHERE: 1, Kind.HYPERBOLIC: -1}[self.kind]

    @property
    def ambient_dim(self) -> int:
        return self.d if self.kind is Kind.EUCLIDEAN else self.d + 1

    @property
    def center(self) -> np.ndarray:
        """Chart center: origin, south pole (0,..,0,-1), or hyperboloid apex (0,..,0,1)."""
        p = np.zeros(self.ambient_dim)
        if self.kind is Kind.SPHERE:
            p[-1] = -1.0
        elif self.kind is Kind.HYPERBOLIC:
            p[-1] = 1.0
        return p

    # -- metric -----------------------------------------------------------

    def inner(self, u, v) -> np.ndarray:
        """Model inner product (Minkowski on the hyperboloid)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind is Kind.HYPERBOLIC:
            return np.sum(u[..., :-1] * v[..., :-1], axis=-1) - u[..., -1] * v[..., -1]
        return np.sum(u * v, axis=-1)

    def norm(self, v) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(v, v), 0.0))

    # -- validation -------------------------------------------------------

    def check_point(self, p, tol: float = POINT_TOL) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise GeometryError(f"expected {self.ambient_dim} ambient coordinates, got {p.shape[-1]}")
        if self.kind is Kind.SPHERE:
            err = np.abs(np.sum(p * p, axis=-1) - 1.0)
        elif self.kind is Kind.HYPERBOLIC:
            err = np.abs(self.inner(p, p) + 1.0)
            if np.any(p[..., -1] <= 0):
                raise GeometryError("point is on the lower sheet of the hyperboloid")
        else:
            return p
        if np.any(err > tol):
            raise GeometryError(f"point is off the {self.kind.value} (error {np.max(err):.2e})")
        return p

    def check_tangent(self, p, v, tol: float = POINT_TOL) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.ambient_dim:
            raise GeometryError(f"expected {self.ambient_dim} ambient coordinates, got {v.shape[-1]}")
        if self.kind is not Kind.EUCLIDEAN:
            err = np.abs(self.inner(v, p))
            scale = np.maximum(1.0, np.sqrt(np.sum(v * v, axis=-1)))
            if np.any(err > tol * scale):
                raise GeometryError(f"vector is not tangent at p (error {np.max(err):.2e})")
        return v

    # -- helpers ----------------------------------------------------------

    def project_point(self, p) -> np.ndarray:
        """Nearest-ish point of the model: renormalise onto the quadric."""
        p = np.asarray(p, dtype=float)
        if self.kind is Kind.SPHERE:
            return p / np.linalg.norm(p, axis=-1, keepdims=True)
        if self.kind is Kind.HYPERBOLIC:
            q = p.copy()
            q[..., -1] = np.sqrt(1.0 + np.sum(p[..., :-1] ** 2, axis=-1))
            return q
        return p

    def project_tangent(self, p, v) -> np.ndarray:
        """Remove the normal component of ``v`` at ``p``."""
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind is Kind.SPHERE:
            return v - self.inner(v, p)[..., None] * p
        if self.kind is Kind.HYPERBOLIC:
            return v + self.inner(v, p)[..., None] * p
        return v

    def tangent_basis(self, p) -> np.ndarray:
        """An orthonormal (in the model metric) basis of T_p, shape (d, ambient)."""
        p = self.check_point(p)
        if self.kind is Kind.EUCLIDEAN:
            return np.eye(self.d)
        basis = []
        for e in np.eye(self.ambient_dim):
            v = self.project_tangent(p, e)
            for b in basis:
                v = v - self.inner(v, b) * b
            n = self.norm(v)
            if n > 1e-8:
                basis.append(v / n)
            if len(basis) == self.d:
                break
        return np.array(basis)

    def from_tangent_coords(self, p, coords) -> np.ndarray:
        """Ambient tangent vector(s) at ``p`` from coordinates in :meth:`tangent_basis`."""
        return np.asarray(coords, dtype=float) @ self.tangent_basis(p)

    def random_points(self, rng: np.random.Generator, n: int, radius: float,
                      center=None) -> np.ndarray:
        """``n`` points uniformly spread (in normal coordinates) over a geodesic ball."""
        center = self.center if center is None else self.check_point(center)
        dirs = rng.normal(size=(n, self.d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        r = radius * rng.uniform(0, 1, n) ** (1.0 / self.d)
        v = self.from_tangent_coords(center, dirs * r[:, None])
        return exp_map(self, np.broadcast_to(center, v.shape), v)

    def random_unit_tangents(self, rng: np.random.Generator, p) -> np.ndarray:
        p = np.atleast_2d(p)
        out = np.empty_like(p)
        for k, pk in enumerate(p):
            c = rng.normal(size=self.d)
            out[k] = self.from_tangent_coords(pk, c / np.linalg.norm(c))
        return out


def _unit_factor(kind: Kind, r: np.ndarray):
    """(cos r, sin r / r) or the hyperbolic analogue, safe at r = 0."""
    small = r < 1e-8
    rs = np.where(small, 1.0, r)
    if kind is Kind.SPHERE:
        c = np.cos(r)
        s = np.where(small, 1.0 - r * r / 6.0, np.sin(rs) / rs)
    else:
        c = np.cosh(r)
        s = np.where(small, 1.0 + r * r / 6.0, np.sinh(rs) / rs)
    return c, s


def exp_map(space: SpaceForm, p, v) -> np.ndarray:
    """Riemannian exponential of tangent vector ``v`` at ``p``."""
    p = space.check_point(p)
    v = space.check_tangent(p, v)
    if space.kind is Kind.EUCLIDEAN:
        return p + v
    r = space.norm(v)
    c, s = _unit_factor(space.kind, r)
    return c[..., None] * p + s[..., None] * v


@dataclass(frozen=True)
class Geodesic:
    """Unit-speed geodesic s -> exp(base, s * direction)."""

    space: SpaceForm
    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        base = self.space.check_point(np.asarray(self.base, dtype=float))
        direction = self.space.check_tangent(base, np.asarray(self.direction, dtype=float))
        if abs(float(self.space.norm(direction)) - 1.0) > POINT_TOL:
            raise GeometryError("geodesic direction must be a unit vector")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def through(cls, space: SpaceForm, base, direction) -> "Geodesic":
        """Build from a not-necessarily-unit tangent ``direction``."""
        base = space.check_point(np.asarray(base, dtype=float))
        v = space.project_tangent(base, np.asarray(direction, dtype=float))
        return cls(space, base, v / space.norm(v))

    def __call__(self, s) -> np.ndarray:
        return geodesic_eval(self, s)

    def velocity(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)[..., None]
        p, u = self.base, self.direction
        if self.space.kind is Kind.SPHERE:
            return -np.sin(s) * p + np.cos(s) * u
        if self.space.kind is Kind.HYPERBOLIC:
            return np.sinh(s) * p + np.cosh(s) * u
        return np.broadcast_to(u, s.shape[:-1] + u.shape).copy()


def geodesic_eval(geo: Geodesic, s, max_s: float | None = None) -> np.ndarray:
    """Point at arclength ``s``; sphere geodesics are restricted to |s| < pi."""
    s = np.asarray(s, dtype=float)
    limit = np.pi if geo.space.kind is Kind.SPHERE else np.inf
    if max_s is not None:
        limit = min(limit, max_s)
    if np.any(np.abs(s) >= limit):
        raise GeometryError(f"arclength outside the injectivity guard |s| < {limit}")
    sc = s[..., None]
    p, u = geo.base, geo.direction
    if geo.space.kind is Kind.SPHERE:
        return np.cos(sc) * p + np.sin(sc) * u
    if geo.space.kind is Kind.HYPERBOLIC:
        return np.cosh(sc) * p + np.sinh(sc) * u
    return p + sc * u


def distance(space: SpaceForm, p, q) -> np.ndarray:
    """Geodesic distance; inner products are clamped only within 1e-9 slack."""
    p = space.check_point(p)
    q = space.check_point(q)
    if space.kind is Kind.EUCLIDEAN:
        return np.linalg.norm(p - q, axis=-1)
    if space.kind is Kind.SPHERE:
        c = space.inner(p, q)
        if np.any(np.abs(c) > 1 + CLAMP_SLACK):
            raise GeometryError("inner product outside [-1, 1]")
        # arccos loses half the digits near 0; use the chord for short distances
        chord = np.linalg.norm(p - q, axis=-1)
        return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    c = -space.inner(p, q)
    if np.any(c < 1 - CLAMP_SLACK):
        raise GeometryError("Minkowski inner product above -1")
    diff = p - q
    chord2 = np.maximum(space.inner(diff, diff), 0.0)
    # -<p,q> = 1 + |p-q|_M^2 / 2, so dist = 2 asinh(|p-q|_M / 2)
    return 2.0 * np.arcsinh(np.sqrt(chord2) / 2.0)


def parallel_transport(geo: Geodesic, v, s) -> np.ndarray:
    """Transport ``v`` (tangent at geo(0)) along ``geo`` to geo(s)."""
    space = geo.space
    v = space.check_tangent(geo.base, np.asarray(v, dtype=float))
    if space.kind is Kind.EUCLIDEAN:
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(v, s.shape + v.shape[-1:]).copy()
    a = space.inner(v, geo.direction)
    w = v - a[..., None] * geo.direction
    return a[..., None] * geo.velocity(s) + w


def geodesic_submanifold_sample(space: SpaceForm, p, basis, lattice) -> np.ndarray:
    """Points exp(p, sum_i a_i b_i) for each coefficient row ``a`` of ``lattice``."""
    p = space.check_point(p)
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    k = basis.shape[0]
    if k >= space.d:
        raise GeometryError("need k < d basis vectors")
    for b in basis:
        space.check_tangent(p, b)
    sv = np.linalg.svd(basis, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise GeometryError("basis vectors are linearly dependent")
    lattice = np.asarray(lattice, dtype=float).reshape(-1, k)
    v = lattice @ basis
    if space.kind is Kind.SPHERE and np.any(space.norm(v) >= np.pi):
        raise GeometryError("lattice leaves the injectivity guard")
    return exp_map(space, np.broadcast_to(p, v.shape), v)


def integrate_geodesic(space: SpaceForm, p, v, s_values: Sequence[float],
                       step: float = 1e-3) -> np.ndarray:
    """Geodesic equation by fixed-step RK4 in ambient coordinates.

    x'' = -<x', x'> x on the sphere and x'' = <x', x'>_M x on the hyperboloid;
    after each step the state is projected back onto the quadric and its
    tangent space. Returns the positions at ``s_values``.
    """
    p = space.check_point(p)
    v = space.check_tangent(p, v)
    s_values = np.asarray(s_values, dtype=float)
    out = np.empty((len(s_values), space.ambient_dim))
    if space.kind is Kind.EUCLIDEAN:
        return p + s_values[:, None] * v
    sign = -1.0 if space.kind is Kind.SPHERE else 1.0

    def rhs(state):
        x, dx = state
        return np.array([dx, sign * space.inner(dx, dx) * x])

    def advance(state, ds):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * ds * k1)
        k3 = rhs(state + 0.5 * ds * k2)
        k4 = rhs(state + ds * k3)
        x, dx = state + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x = space.project_point(x)
        return np.array([x, space.project_tangent(x, dx)])

    for direction in (1.0, -1.0):
        state = np.array([p, v])
        s_now = 0.0
        idx = np.nonzero(s_values * direction >= 0)[0]
        idx = idx[np.argsort(np.abs(s_values[idx]))]
        for k in idx:
            target = abs(s_values[k])
            while s_now < target - 1e-15:
                ds = min(step, target - s_now)
                state = advance(state, direction * ds)
                s_now += ds
            out[k] = state[0]
    return out


def write_point_cloud(path: str | Path, points, columns: Sequence[str] | None = None) -> None:
    """CSV with a header row, one point per row."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if columns is None:
        columns = [f"x{i + 1}" for i in range(points.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in points:
            w.writerow([repr(float(c)) for c in row])
