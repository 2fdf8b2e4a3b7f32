"""Charts that send every geodesic of a space form to a straight line.

* sphere: central (gnomonic) projection from the origin onto the tangent
  plane ``x_{d+1} = -1`` at the south pole;
* hyperboloid: the Beltrami-Klein projection onto ``x_{d+1} = 1``;
* Euclidean space: the identity.

Also here: the Klein metric, the projective map exchanging Nikodym and
Kakeya configurations, collinearity/hyperplane residuals, bi-Lipschitz
ratio scans, and the (intercept, angle) coordinates on the space of
geodesics crossing a reference geodesic of a surface.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from .space_forms import Geodesic, GeometryError, Kind, SpaceForm, distance, parallel_transport

__all__ = [
    "ChartKind", "ChartMap", "chart_for", "gnomonic_fwd", "gnomonic_inv", "klein_fwd",
    "klein_inv", "klein_metric", "klein_segment_length", "collinearity_residual",
    "hyperplane_residual", "StraightenedGeodesic", "straighten_geodesic",
    "projective_nikodym_to_kakeya", "BilipschitzReport", "bilipschitz_scan",
    "LineSpaceElement", "line_space_map", "recentering_isometry",
]

GNOMONIC_GUARD = -0.05
KLEIN_GUARD = 0.99
PROJECTIVE_GUARD = 1e-6


def gnomonic_fwd(p) -> np.ndarray:
    """u_i = -x_i / x_{d+1}; requires x_{d+1} <= -0.05."""
    p = np.asarray(p, dtype=float)
    last = p[..., -1]
    if np.any(last > GNOMONIC_GUARD):
        raise GeometryError(f"gnomonic chart needs x_(d+1) <= {GNOMONIC_GUARD}")
    return -p[..., :-1] / last[..., None]


def gnomonic_inv(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    r = np.sqrt(np.sum(u * u, axis=-1, keepdims=True) + 1.0)
    return np.concatenate([u / r, -1.0 / r], axis=-1)


def klein_fwd(p) -> np.ndarray:
    """w_i = x_i / x_{d+1} for p on the upper hyperboloid."""
    p = np.asarray(p, dtype=float)
    if np.any(p[..., -1] <= 0):
        raise GeometryError("Klein chart needs a point on the upper sheet")
    return p[..., :-1] / p[..., -1:]


def klein_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    n2 = np.sum(w * w, axis=-1, keepdims=True)
    if np.any(n2 > KLEIN_GUARD ** 2):
        raise GeometryError(f"Klein inverse guarded to |w| <= {KLEIN_GUARD}")
    r = np.sqrt(1.0 - n2)
    return np.concatenate([w / r, 1.0 / r], axis=-1)


def klein_metric(w) -> np.ndarray:
    """g_ij = delta_ij / (1-|w|^2) + w_i w_j / (1-|w|^2)^2."""
    w = np.asarray(w, dtype=float)
    n2 = np.sum(w * w, axis=-1)
    if np.any(n2 >= 1.0):
        raise GeometryError("Klein metric is defined on the open unit ball")
    a = 1.0 / (1.0 - n2)
    eye = np.eye(w.shape[-1])
    return a[..., None, None] * eye + (a * a)[..., None, None] * w[..., :, None] * w[..., None, :]


def klein_segment_length(w0, w1, panels: int = 8, order: int = 8) -> float:
    """Klein-metric length of the straight segment w0 -> w1 by composite Gauss-Legendre."""
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    s = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    dw = w1 - w0
    pts = w0 + s[:, None] * dw
    g = klein_metric(pts)
    speed = np.sqrt(np.einsum("i,nij,j->n", dw, g, dw))
    return float(np.sum(wts * speed))


class ChartKind(str, enum.Enum):
    GNOMONIC = "gnomonic"
    KLEIN = "klein"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ChartMap:
    """A straightening chart for one model, centered at the model's chart center."""

    kind: ChartKind
    d: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ChartKind(self.kind))

    @property
    def space(self) -> SpaceForm:
        kind = {ChartKind.GNOMONIC: Kind.SPHERE, ChartKind.KLEIN: Kind.HYPERBOLIC,
                ChartKind.IDENTITY: Kind.EUCLIDEAN}[self.kind]
        return SpaceForm(kind, self.d)

    def forward(self, p) -> np.ndarray:
        if self.kind is ChartKind.GNOMONIC:
            return gnomonic_fwd(p)
        if self.kind is ChartKind.KLEIN:
            return klein_fwd(p)
        return np.array(p, dtype=float)

    def inverse(self, u) -> np.ndarray:
        if self.kind is ChartKind.GNOMONIC:
            return gnomonic_inv(u)
        if self.kind is ChartKind.KLEIN:
            return klein_inv(u)
        return np.array(u, dtype=float)

    def pushforward(self, p, v) -> np.ndarray:
        """Differential of :meth:`forward` at ``p`` applied to tangent ``v``."""
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind is ChartKind.IDENTITY:
            return v.copy()
        last = p[..., -1:]
        out = v[..., :-1] / last - p[..., :-1] * v[..., -1:] / last ** 2
        return -out if self.kind is ChartKind.GNOMONIC else out

    def inverse_jacobian(self, u) -> np.ndarray:
        """(ambient x d) derivative of :meth:`inverse`; full column rank on the domain."""
        u = np.asarray(u, dtype=float)
        if self.kind is ChartKind.IDENTITY:
            return np.eye(self.d)
        n2 = float(u @ u)
        if self.kind is ChartKind.GNOMONIC:
            r = np.sqrt(1.0 + n2)
            top = np.eye(self.d) / r - np.outer(u, u) / r ** 3
            bottom = u / r ** 3
        else:
            r = np.sqrt(1.0 - n2)
            top = np.eye(self.d) / r + np.outer(u, u) / r ** 3
            bottom = u / r ** 3
        return np.vstack([top, bottom[None, :]])

    def volume_density(self, u) -> np.ndarray:
        """Riemannian volume per unit chart volume, sqrt(det g) in chart coordinates."""
        u = np.asarray(u, dtype=float)
        n2 = np.sum(u * u, axis=-1)
        if self.kind is ChartKind.GNOMONIC:
            return (1.0 + n2) ** (-(self.d + 1) / 2.0)
        if self.kind is ChartKind.KLEIN:
            return (1.0 - n2) ** (-(self.d + 1) / 2.0)
        return np.ones_like(n2)


def chart_for(space: SpaceForm) -> ChartMap:
    kind = {Kind.SPHERE: ChartKind.GNOMONIC, Kind.HYPERBOLIC: ChartKind.KLEIN,
            Kind.EUCLIDEAN: ChartKind.IDENTITY}[space.kind]
    return ChartMap(kind, space.d)


# ------------------------------------------------------------------ residuals


def _diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.max(pdist(points)))


def collinearity_residual(points) -> float:
    """Max distance to the principal-axis line, divided by the point-set diameter."""
    points = np.asarray(points, dtype=float)
    diam = _diameter(points)
    if diam == 0.0:
        return 0.0
    centered = points - points.mean(axis=0)
    axis = np.linalg.svd(centered, full_matrices=False)[2][0]
    off = centered - np.outer(centered @ axis, axis)
    return float(np.max(np.linalg.norm(off, axis=1)) / diam)


def hyperplane_residual(points) -> float:
    """Max distance to the best-fit hyperplane, divided by the point-set diameter."""
    points = np.asarray(points, dtype=float)
    diam = _diameter(points)
    if diam == 0.0:
        return 0.0
    centered = points - points.mean(axis=0)
    normal = np.linalg.svd(centered, full_matrices=True)[2][-1]
    return float(np.max(np.abs(centered @ normal)) / diam)


@dataclass(frozen=True)
class StraightenedGeodesic:
    images: np.ndarray
    residual: float


def straighten_geodesic(geo: Geodesic, chart: ChartMap, samples) -> StraightenedGeodesic:
    """Chart images of geo(s) for s in ``samples`` and their collinearity residual."""
    pts = geo(np.asarray(samples, dtype=float))
    return straighten_points(pts, chart)


def straighten_points(points, chart: ChartMap) -> StraightenedGeodesic:
    images = chart.forward(points)
    return StraightenedGeodesic(images, collinearity_residual(images))


# ------------------------------------------------------------ projective map


def projective_nikodym_to_kakeya(x) -> np.ndarray:
    """(x~, x_d) -> (x~ / x_d, 1 / x_d)."""
    x = np.asarray(x, dtype=float)
    last = x[..., -1:]
    if np.any(np.abs(last) < PROJECTIVE_GUARD):
        raise GeometryError(f"projective map needs |x_d| >= {PROJECTIVE_GUARD}")
    return np.concatenate([x[..., :-1] / last, 1.0 / last], axis=-1)


# ------------------------------------------------------------ bi-Lipschitz scan


@dataclass(frozen=True)
class BilipschitzReport:
    ratio_min: float
    ratio_max: float
    n_samples: int

    def as_dict(self) -> dict:
        return {"ratio_min": self.ratio_min, "ratio_max": self.ratio_max,
                "n_samples": self.n_samples}


def bilipschitz_scan(chart: ChartMap, radius: float, n: int, seed: int) -> BilipschitzReport:
    """Extremes of |chart(p) - chart(q)| / dist(p, q) over ``n`` seeded random
    pairs in the geodesic ball of ``radius`` about the chart center."""
    space = chart.space
    rng = np.random.default_rng(seed)
    p = space.random_points(rng, n, radius)
    q = space.random_points(rng, n, radius)
    dist = distance(space, p, q)
    # resample degenerate pairs
    while np.any(bad := dist < 1e-12):
        q[bad] = space.random_points(rng, int(bad.sum()), radius)
        dist = distance(space, p, q)
    ratio = np.linalg.norm(chart.forward(p) - chart.forward(q), axis=1) / dist
    return BilipschitzReport(float(ratio.min()), float(ratio.max()), int(n))


# ------------------------------------------------------------ recentering


def recentering_isometry(space: SpaceForm, point) -> Callable[[np.ndarray], np.ndarray]:
    """An ambient isometry of the model sending ``point`` to the chart center.

    Rotation in the plane of ``point`` and the south pole for the sphere, a
    Lorentz boost for the hyperboloid, a translation for Euclidean space.
    Applies to points and (linear part) tangent vectors alike for the curved
    models.
    """
    point = space.check_point(point)
    target = space.center
    if space.kind is Kind.EUCLIDEAN:
        shift = target - point
        return lambda x: np.asarray(x, dtype=float) + shift
    n = space.ambient_dim
    if space.kind is Kind.SPHERE:
        c = float(point @ target)
        w = target - c * point
        s = np.linalg.norm(w)
        if s < 1e-15:
            m = np.eye(n) if c > 0 else np.diag([1.0] * (n - 2) + [-1.0, -1.0])
        else:
            e1, e2 = point, w / s
            m = (np.eye(n) - np.outer(e1, e1) - np.outer(e2, e2)
                 + c * (np.outer(e1, e1) + np.outer(e2, e2))
                 + s * (np.outer(e2, e1) - np.outer(e1, e2)))
    else:
        spatial = point[:-1]
        sr = np.linalg.norm(spatial)
        m = np.eye(n)
        if sr > 0:
            u = spatial / sr
            ch, sh = point[-1], sr
            m[:-1, :-1] += (ch - 1.0) * np.outer(u, u)
            m[:-1, -1] = -sh * u
            m[-1, :-1] = -sh * u
            m[-1, -1] = ch
    return lambda x: np.asarray(x, dtype=float) @ m.T


# ------------------------------------------------------------ line-space model


@dataclass(frozen=True)
class LineSpaceElement:
    """A geodesic crossing the reference geodesic at arclength ``z`` with
    transported angle ``e`` (radians, reduced to [0, 2 pi))."""

    z: float
    e: float

    def __post_init__(self):
        object.__setattr__(self, "e", float(self.e) % (2 * np.pi))


def _oriented_normal(space: SpaceForm, chart: ChartMap, p, u) -> np.ndarray:
    basis = space.tangent_basis(p)
    n = basis[0] - space.inner(basis[0], u) * u
    if space.norm(n) < 1e-6:
        n = basis[1] - space.inner(basis[1], u) * u
    n = n / space.norm(n)
    a = chart.pushforward(p, u)
    b = chart.pushforward(p, n)
    return n if a[0] * b[1] - a[1] * b[0] > 0 else -n


def line_space_map(space: SpaceForm, gamma0: Geodesic, el: LineSpaceElement,
                   half_length: float = np.pi / 4) -> tuple[float, float]:
    """(rho, eta): chart position of gamma0(z) along the image line of gamma0,
    and the angle of the image line of the geodesic leaving gamma0(z) in the
    direction transported from angle e at gamma0(0), measured from that image line.
    """
    if space.d != 2:
        raise GeometryError("line-space model is for surfaces (d = 2)")
    if abs(el.z) > half_length:
        raise GeometryError(f"z outside the reference segment |z| <= {half_length}")
    chart = chart_for(space)
    p0 = gamma0.base
    u0 = gamma0.direction
    origin = chart.forward(p0)
    l0 = chart.pushforward(p0, u0)
    l0 = l0 / np.linalg.norm(l0)
    pz = gamma0(el.z)
    rho = float((chart.forward(pz) - origin) @ l0)
    n0 = _oriented_normal(space, chart, p0, u0)
    v = np.cos(el.e) * u0 + np.sin(el.e) * n0
    w = parallel_transport(gamma0, v, el.z)
    img = chart.pushforward(pz, w)
    eta = (np.arctan2(img[1], img[0]) - np.arctan2(l0[1], l0[0])) % (2 * np.pi)
    return rho, float(eta)
