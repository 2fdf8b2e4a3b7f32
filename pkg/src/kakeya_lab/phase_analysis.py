"""Non-degeneracy and curvature conditions for oscillatory phases.

A phase phi(x, t; y) with X = (x, t) in R^d and y in R^(d-1) is analysed
through its mixed Hessian d/dX d/dy phi. The conditions checked here:

* rank: the d x (d-1) mixed Hessian has full rank;
* curvature: the y-Hessian of <grad_X phi(X; y), G(X; y0)> at y0 is
  non-singular, where G is the generalized cross product of the columns of
  the mixed Hessian;
* proportionality: the second derivative of the y-Hessian along G is a
  scalar multiple of the first derivative along G;
* translation invariance: phi = <x, y> + psi(t; y) with psi(0; y) = 0;
* straightness: the direction of G does not depend on X.

Each check returns a :class:`ConditionReport`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .phase_expr import PhaseFunction, PhasePoint, Var, deriv_tensor

__all__ = [
    "ConditionReport", "BourgainResult", "CurveTrace", "DegeneratePhaseError",
    "g0", "check_h1", "check_h2", "bourgain_residual", "check_bourgain",
    "check_translation_invariant", "is_translation_invariant", "check_straight_condition",
    "trace_curve", "tube_contains", "sample_points", "stack_points", "point_at",
]

MINOR_FLOOR = 1e-14
T_NORMALIZE_FLOOR = 1e-8
FROBENIUS_FLOOR = 1e-12
FIELD_STEP = 1e-4
NEWTON_STEP_TOL = 1e-12
NEWTON_MAX_ITER = 50
MAX_CONDITION = 1e8


class DegeneratePhaseError(ValueError):
    """The mixed Hessian has no non-vanishing maximal minor."""


@dataclass
class ConditionReport:
    """Outcome of one condition over a sample set.

    ``residuals`` are non-negative per-sample deficiencies and the check
    passes iff their maximum is below ``threshold``. For most conditions the
    threshold is the named tolerance itself; for the rank and curvature
    checks the residual is a monotone transform of the raw quantity
    (singular-value ratio, determinant), stored in ``values``.
    """

    name: str
    residuals: np.ndarray
    tol: float
    threshold: float
    values: Optional[np.ndarray] = None
    constants: Optional[np.ndarray] = None
    samples: Optional[PhasePoint] = None
    notes: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual < self.threshold

    @property
    def witness_index(self) -> int:
        return int(np.argmax(self.residuals)) if self.residuals.size else -1

    def witness(self) -> Optional[dict]:
        k = self.witness_index
        if k < 0 or self.samples is None:
            return None
        pt = point_at(self.samples, k)
        return {"index": k, "x": pt.x.tolist(), "t": float(pt.t), "y": pt.y.tolist()}

    def to_dict(self) -> dict:
        out = {
            "condition": self.name,
            "pass": self.passed,
            "tol": self.tol,
            "threshold": self.threshold,
            "max_residual": self.max_residual,
            "n_samples": int(self.residuals.size),
            "residuals": self.residuals.tolist(),
            "witness": self.witness(),
            "notes": list(self.notes),
        }
        if self.values is not None:
            out["values"] = self.values.tolist()
        if self.constants is not None:
            out["C"] = [None if not np.isfinite(c) else float(c) for c in self.constants]
        return out


# ------------------------------------------------------------------ samples


def point_at(pts: PhasePoint, k: int) -> PhasePoint:
    n = pts.batch_shape
    x = np.broadcast_to(pts.x, n + pts.x.shape[-1:])[k]
    t = np.broadcast_to(pts.t, n)[k]
    y = np.broadcast_to(pts.y, n + pts.y.shape[-1:])[k]
    return PhasePoint(x, t, y)


def stack_points(points) -> PhasePoint:
    points = list(points)
    return PhasePoint(np.stack([p.x for p in points]), np.array([float(p.t) for p in points]),
                      np.stack([p.y for p in points]))


def sample_points(phi: PhaseFunction, n: int = 5, radius: float = 0.8, seed=None,
                  y=None) -> PhasePoint:
    """Lattice of ``n`` points per coordinate, one cube per variable group.

    Each group (x, t, y) gets the cube inscribed in the ball of radius
    ``radius * epsilon0``. If ``y`` is given it is held fixed and only (x, t)
    is sampled. A seed adds uniform jitter of a quarter lattice step.
    """
    k = phi.d - 1
    r = radius * phi.epsilon0
    rng = np.random.default_rng(seed) if seed is not None else None

    def axis(dim):
        a = r / np.sqrt(dim)
        return np.linspace(-a, a, n), a

    axes, bounds = [], []
    for dim, count in ((k, k), (1, 1)) + (() if y is not None else ((k, k),)):
        line, a = axis(dim)
        axes += [line] * count
        bounds += [a] * count
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))
    if rng is not None and n > 1:
        step = 2 * np.asarray(bounds) / (n - 1)
        grid = np.clip(grid + rng.uniform(-0.25, 0.25, grid.shape) * step,
                       -np.asarray(bounds), np.asarray(bounds))
    x, t = grid[:, :k], grid[:, k]
    ys = np.broadcast_to(np.asarray(y, dtype=float), (len(grid), k)).copy() if y is not None \
        else grid[:, k + 1:]
    return PhasePoint(x, t, ys)


# ------------------------------------------------------------------ G0


def _minor_vector(m: np.ndarray) -> np.ndarray:
    """Generalized cross product of the columns of (..., d, d-1) matrices."""
    d = m.shape[-2]
    comps = []
    for i in range(d):
        sub = np.delete(m, i, axis=-2)
        comps.append((-1) ** i * np.linalg.det(sub) if d > 1 else np.ones(m.shape[:-2]))
    return np.stack(comps, axis=-1)


def g0(phi: PhaseFunction, pt: PhasePoint, normalize: bool = True) -> np.ndarray:
    """The vector G orthogonal to every column of d/dX d/dy phi.

    Normalized so the t-component is 1 when it exceeds 1e-8 in magnitude,
    else to unit length. Raises :class:`DegeneratePhaseError` when all
    maximal minors are below 1e-14.
    """
    g = _minor_vector(deriv_tensor(phi, ("X", "y"), pt))
    scale = np.max(np.abs(g), axis=-1)
    if np.any(scale < MINOR_FLOOR):
        raise DegeneratePhaseError("mixed Hessian is rank deficient (all minors vanish)")
    if not normalize:
        return g
    gt = g[..., -1:]
    unit = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(np.abs(gt) > T_NORMALIZE_FLOOR, g / np.where(gt == 0, 1, gt), unit)


# ------------------------------------------------------------------ rank / curvature


def check_h1(phi: PhaseFunction, samples: PhasePoint, tol: float = 1e-6) -> ConditionReport:
    """Full rank of the mixed Hessian, judged by sigma_min / sigma_max > tol."""
    m = deriv_tensor(phi, ("X", "y"), samples)
    sv = np.linalg.svd(m, compute_uv=False)
    top = sv[..., 0]
    ratio = np.where(top > 0, sv[..., -1] / np.where(top > 0, top, 1), 0.0)
    return ConditionReport("h1", (1.0 - ratio).reshape(-1), tol, 1.0 - tol,
                           values=ratio.reshape(-1), samples=samples)


def curvature_matrix(phi: PhaseFunction, pt: PhasePoint, g=None) -> np.ndarray:
    """y-Hessian of <grad_X phi(X; y), g> with g frozen (default: G at ``pt``)."""
    if g is None:
        g = g0(phi, pt)
    return np.einsum("...i,...ijk->...jk", g, deriv_tensor(phi, ("X", "y", "y"), pt))


def check_h2(phi: PhaseFunction, y0, samples: PhasePoint, tol: float = 1e-8) -> ConditionReport:
    """Non-singular curvature matrix at y0 over the X-samples, min |det| > tol.

    The residual is 1 / (1 + |det|), compared against 1 / (1 + tol).
    """
    pts = PhasePoint(samples.x, samples.t,
                     np.broadcast_to(np.asarray(y0, dtype=float), samples.batch_shape + (phi.d - 1,)))
    det = np.abs(np.linalg.det(curvature_matrix(phi, pts))).reshape(-1)
    return ConditionReport("h2", 1.0 / (1.0 + det), tol, 1.0 / (1.0 + tol), values=det,
                           samples=pts)


# ------------------------------------------------------------------ proportionality


@dataclass(frozen=True)
class BourgainResult:
    C: np.ndarray
    residual: np.ndarray
    defined: np.ndarray
    m1: np.ndarray
    m2: np.ndarray


def _m1(phi: PhaseFunction, pt: PhasePoint, g) -> np.ndarray:
    return np.einsum("...i,...ijk->...jk", g, deriv_tensor(phi, ("X", "y", "y"), pt))


def bourgain_residual(phi: PhaseFunction, pt: PhasePoint, mode: str = "frozen",
                      scale: float = 1.0) -> BourgainResult:
    """Least-squares C with M2 ~ C * M1 and the relative misfit.

    M1 is the derivative of the y-Hessian along G, M2 the second derivative.
    ``mode="frozen"`` keeps G fixed at ``pt``; ``mode="field"`` differentiates
    M1 along the G field by central differences. ``scale`` multiplies G.
    """
    g = scale * g0(phi, pt)
    m1 = _m1(phi, pt, g)
    if mode == "frozen":
        m2 = np.einsum("...i,...l,...iljk->...jk", g, g,
                       deriv_tensor(phi, ("X", "X", "y", "y"), pt))
    elif mode == "field":
        h = FIELD_STEP
        k = phi.d - 1

        def shifted(sign):
            q = PhasePoint(pt.x + sign * h * g[..., :k], pt.t + sign * h * g[..., k], pt.y)
            return _m1(phi, q, scale * g0(phi, q))

        m2 = (shifted(1) - shifted(-1)) / (2 * h)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    n1 = np.sum(m1 * m1, axis=(-2, -1))
    n2 = np.sqrt(np.sum(m2 * m2, axis=(-2, -1)))
    defined = n1 >= FROBENIUS_FLOOR ** 2
    c = np.where(defined, np.sum(m2 * m1, axis=(-2, -1)) / np.where(defined, n1, 1), np.nan)
    misfit = m2 - np.where(defined, c, 0)[..., None, None] * m1
    rel = np.sqrt(np.sum(misfit * misfit, axis=(-2, -1))) / np.where(n2 > 0, n2, 1)
    residual = np.where(n2 < FROBENIUS_FLOOR, 0.0, np.where(defined, rel, 1.0))
    return BourgainResult(c, residual, defined | (n2 < FROBENIUS_FLOOR), m1, m2)


def check_bourgain(phi: PhaseFunction, samples: PhasePoint, tol: float = 1e-8,
                   mode: str = "frozen") -> ConditionReport:
    res = bourgain_residual(phi, samples, mode)
    notes = [] if np.all(res.defined) else ["C undefined where M1 vanishes but M2 does not"]
    return ConditionReport("bourgain", np.asarray(res.residual).reshape(-1), tol, tol,
                           constants=np.asarray(res.C).reshape(-1), samples=samples, notes=notes)


# ------------------------------------------------------------------ normal forms


def check_translation_invariant(phi: PhaseFunction, samples: PhasePoint,
                                tol: float = 1e-9) -> ConditionReport:
    """Residual max(|d/dx_i phi - y_i|, |phi(x, 0; y) - <x, y>|) per sample."""
    grad_x = deriv_tensor(phi, ("x",), samples)
    y = np.broadcast_to(samples.y, grad_x.shape)
    r1 = np.max(np.abs(grad_x - y), axis=-1)
    at0 = samples.with_t(np.zeros(samples.batch_shape))
    r2 = np.abs(np.broadcast_to(phi.evaluate(at0), samples.batch_shape)
                - np.sum(samples.x * samples.y, axis=-1))
    return ConditionReport("translation_invariant", np.maximum(r1, r2).reshape(-1), tol, tol,
                           samples=samples)


def is_translation_invariant(phi: PhaseFunction) -> bool:
    """Exact symbolic test that d/dx_i phi is the variable y_i."""
    k = phi.d - 1
    return all(phi.derivative(f"x{i + 1}") == Var(f"y{i + 1}") for i in range(k))


def _wedge_norm(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = u.shape[-1]
    total = 0.0
    for i, j in itertools.combinations(range(d), 2):
        total = total + (u[..., i] * v[..., j] - u[..., j] * v[..., i]) ** 2
    return np.sqrt(total)


def check_straight_condition(phi: PhaseFunction, samples: PhasePoint,
                             tol: float = 1e-8) -> ConditionReport:
    """Sine of the largest angle between unit G vectors at samples sharing y.

    The per-sample residual is the largest sine against any other sample with
    the same y; samples at different y are never compared.
    """
    g = g0(phi, samples).reshape(-1, phi.d)
    g = g / np.linalg.norm(g, axis=-1, keepdims=True)
    n = len(g)
    ys = np.broadcast_to(samples.y, samples.batch_shape + (phi.d - 1,)).reshape(n, -1)
    _, group = np.unique(ys, axis=0, return_inverse=True)
    group = group.ravel()
    residuals = np.zeros(n)
    smallest = n
    for gid in np.unique(group):
        idx = np.flatnonzero(group == gid)
        smallest = min(smallest, len(idx))
        if len(idx) > 1:
            sub = g[idx]
            residuals[idx] = np.max(_wedge_norm(sub[:, None, :], sub[None, :, :]), axis=1)
    notes = ["insufficient samples"] if smallest < 4 else []
    return ConditionReport("straight", residuals, tol, tol, samples=samples, notes=notes)


# ------------------------------------------------------------------ curves


@dataclass(frozen=True)
class CurveTrace:
    """Points (x(t), t) on the level set of grad_y phi through the base point."""

    t: np.ndarray
    x: np.ndarray
    complete: bool
    message: str = ""
    method: str = "newton"

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.t])


def _grad_y(phi: PhaseFunction, x, t, y) -> np.ndarray:
    return deriv_tensor(phi, ("y",), PhasePoint(x, t, y))


def trace_curve(phi: PhaseFunction, y, base: PhasePoint, t_grid,
                method: str = "auto") -> CurveTrace:
    """Solve grad_y phi(x, t; y) = grad_y phi(base; y) for x along ``t_grid``.

    Newton continuation sweeps outward from t = 0 in both directions. With
    ``method="auto"`` translation-invariant phases use the closed form
    x(t) = x_base + grad_y psi(0; y) - grad_y psi(t; y).
    On failure the traced part is returned with ``complete=False``.
    """
    y = np.asarray(y, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    x_base = np.asarray(base.x, dtype=float)
    t_base = float(base.t)
    zero = np.zeros_like(x_base)
    v0 = _grad_y(phi, x_base, t_base, y)
    if method == "auto" and is_translation_invariant(phi):
        psi0 = _grad_y(phi, zero, t_base, y)
        psit = _grad_y(phi, np.zeros((len(t_grid), len(zero))), t_grid, y)
        return CurveTrace(t_grid, x_base + psi0 - psit, True, method="closed_form")

    order = np.argsort(t_grid, kind="stable")
    ts = t_grid[order]
    xs = np.full((len(ts), len(x_base)), np.nan)
    failed = ""
    fwd = np.flatnonzero(ts >= t_base)
    bwd = np.flatnonzero(ts < t_base)[::-1]
    for idx in (fwd, bwd):
        x = x_base.copy()
        for k in idx:
            x, err = _newton(phi, x, ts[k], y, v0)
            if err:
                failed = failed or f"continuation aborted at t={ts[k]:.6g}: {err}"
                break
            xs[k] = x
    keep = ~np.isnan(xs[:, 0]) if len(x_base) else np.ones(len(ts), bool)
    return CurveTrace(ts[keep], xs[keep], not failed, failed)


def _newton(phi, x, t, y, v0):
    for _ in range(NEWTON_MAX_ITER):
        f = _grad_y(phi, x, t, y) - v0
        jac = deriv_tensor(phi, ("y", "x"), PhasePoint(x, t, y))
        if np.linalg.cond(jac) > MAX_CONDITION:
            return x, "singular x-block"
        step = np.linalg.solve(jac, -f)
        x = x + step
        if np.linalg.norm(step) < NEWTON_STEP_TOL:
            return x, ""
    return x, f"Newton did not converge in {NEWTON_MAX_ITER} iterations"


def tube_contains(phi: PhaseFunction, y, base: PhasePoint, delta: float, query) -> np.ndarray:
    """|grad_y phi(query; y) - grad_y phi(base; y)| < delta for query = (x, t)."""
    y = np.asarray(y, dtype=float)
    q = np.asarray(query, dtype=float)
    v0 = _grad_y(phi, base.x, base.t, y)
    v = _grad_y(phi, q[..., :-1], q[..., -1], y)
    return np.linalg.norm(v - v0, axis=-1) < delta
